"""Command-line pipeline: ingest -> score -> rerank -> evaluate -> tune ->
report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 solver error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys

from .dataset import (build_item_groups, build_repeat_sets, cap_history,
                      filter_min_activity, ground_truth_repeat_ratio,
                      load_baskets, load_categories, load_targets,
                      sample_users, save_baskets, save_categories,
                      save_targets, split_leave_last)
from .errors import DataError, SolverError, UsageError
from .metrics import MetricsReport, evaluate, report_table
from .objective import (ExposureModel, RerankConfig, build_combined_problem,
                        build_unified_problem, choose_sign_mode,
                        original_topk)
from .scorer import (CandidateSet, import_scores, make_combined,
                     make_unified, missing_users, save_scores,
                     score_explore_popularity, score_repeat_topfreq)
from .solver import RerankedBaskets, rerank_all
from .tuner import (GridSpec, run_grid, theta_deciles, write_chosen_config,
                    write_sweep_csv)

MODE_TO_KIND = {
    "radiv": "radiv",
    "raif": "raif",
    "naive-div": "naive_div",
    "naive-fair": "naive_fair",
    "repeat-only": "repeat_only",
    "none": "relevance_only",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: D102 - exit code contract
        raise UsageError(message)


def _grid_arg(raw: str) -> list[float]:
    try:
        return [float(x) for x in raw.split(",") if x.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"bad grid value list: {raw!r}") from exc


def build_parser() -> _Parser:
    parser = _Parser(prog="basket-rerank",
                     description="Repeat-bias-aware re-ranking for "
                                 "next-basket recommendation")
    parser.add_argument("--config", help="key = value file; keys match long "
                                         "flag names with dashes or underscores")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("ingest", parents=[], description="Load, filter, and "
                       "split a basket dataset.")
    p.add_argument("--baskets", required=True)
    p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    p.add_argument("--categories")
    p.add_argument("--min-baskets", type=int, default=3)
    p.add_argument("--min-item-purchases", type=int, default=5)
    p.add_argument("--max-baskets", type=int, default=50)
    p.add_argument("--sample-users", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dry-run", action="store_true")

    p = sub.add_parser("score", description="Emit built-in scorer candidate "
                       "scores as TSV.")
    p.add_argument("--train", required=True, help="train baskets JSONL")
    p.add_argument("--kind", choices=["unified", "combined"], default="unified")
    p.add_argument("--mix", type=float, default=0.5,
                   help="unified blend weight for the repeat side")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dry-run", action="store_true")

    p = sub.add_parser("rerank", description="Re-rank candidate scores into "
                       "K-item baskets.")
    _add_data_flags(p)
    _add_rerank_flags(p)
    p.add_argument("--targets", help="needed for --sign auto")
    p.add_argument("--engine", default="auto",
                   choices=["auto", "linear", "bnb", "bruteforce", "greedy"])
    p.add_argument("--out", required=True, help="reranked baskets TSV")
    p.add_argument("--stats", help="solver statistics JSON")
    p.add_argument("--dump-problems", help="serialized problems JSONL")
    p.add_argument("--skip-errors", action="store_true")
    p.add_argument("--dry-run", action="store_true")

    p = sub.add_parser("evaluate", description="Compute metrics for reranked "
                       "baskets against targets.")
    p.add_argument("--baskets", required=True, help="reranked baskets TSV")
    p.add_argument("--train", required=True)
    p.add_argument("--categories")
    p.add_argument("--targets", required=True)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--omega", type=float, default=0.5)
    p.add_argument("--log-base", type=float, default=math.e)
    p.add_argument("--exposure", choices=["uniform", "log-discount"],
                   default="log-discount")
    p.add_argument("--per-user", help="per-user breakdown TSV")
    p.add_argument("--out", help="report JSON")
    p.add_argument("--dry-run", action="store_true")

    p = sub.add_parser("tune", description="Grid search on the validation "
                       "split with the Recall-tolerance selection rule.")
    _add_data_flags(p)
    _add_rerank_flags(p)
    p.add_argument("--targets", required=True, help="validation targets JSONL")
    p.add_argument("--engine", default="auto",
                   choices=["auto", "linear", "bnb", "bruteforce", "greedy"])
    p.add_argument("--epsilon-grid", type=_grid_arg)
    p.add_argument("--alpha-grid", type=_grid_arg)
    p.add_argument("--lambda-grid", type=_grid_arg)
    p.add_argument("--theta-grid", type=_grid_arg)
    p.add_argument("--recall-tolerance", type=float, default=0.10)
    p.add_argument("--sweep-out", help="per-grid-point metrics CSV")
    p.add_argument("--chosen-out", help="chosen config JSON")
    p.add_argument("--dry-run", action="store_true")

    p = sub.add_parser("report", description="Tabulate one or more metrics "
                       "reports.")
    p.add_argument("reports", nargs="+", help="report JSON files")
    p.add_argument("--markdown", action="store_true")
    p.add_argument("--out", help="write table to file instead of stdout")
    p.add_argument("--dry-run", action="store_true")
    return parser


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train", required=True, help="train baskets JSONL")
    p.add_argument("--categories")
    p.add_argument("--scores", help="unified scores TSV")
    p.add_argument("--repeat-scores", help="combined repeat scores TSV")
    p.add_argument("--explore-scores", help="combined explore scores TSV")


def _add_rerank_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", required=True, choices=sorted(MODE_TO_KIND))
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--theta", type=float, default=0.0)
    p.add_argument("--theta-inclusive", action="store_true",
                   help="count repeat scores >= theta instead of > theta")
    p.add_argument("--sign", choices=["auto", "penalize", "reward"],
                   default="penalize")
    p.add_argument("--exposure", choices=["uniform", "log-discount"],
                   default="log-discount")
    p.add_argument("--omega", type=float, default=0.5)
    p.add_argument("--log-base", type=float, default=math.e)
    p.add_argument("--seed", type=int, default=0)


def _apply_config_file(argv: list[str], parser: _Parser) -> list[str]:
    """Prepend key=value file entries as flags so the CLI overrides them."""
    pre = _Parser(add_help=False)
    pre.add_argument("--config")
    ns, _ = pre.parse_known_args(argv)
    if not ns.config:
        return argv
    extra: list[str] = []
    with open(ns.config, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{ns.config}:{lineno}: expected key = value")
            key, value = (x.strip() for x in line.split("=", 1))
            flag = "--" + key.replace("_", "-")
            extra += [flag, value]
    # insert after the verb so subparser flags resolve
    verbs = set(MODE_TO_KIND) | {"ingest", "score", "rerank", "evaluate",
                                 "tune", "report"}
    for i, tok in enumerate(argv):
        if tok in verbs and tok in {"ingest", "score", "rerank", "evaluate",
                                    "tune", "report"}:
            return argv[:i + 1] + extra + argv[i + 1:]
    return argv + extra


def _exposure(name: str) -> ExposureModel:
    return ExposureModel(name.replace("-", "_"))


def _load_candidates(args) -> CandidateSet:
    if args.scores:
        if args.repeat_scores or args.explore_scores:
            raise UsageError("give --scores or --repeat-scores/--explore-scores, "
                             "not both")
        return import_scores(args.scores, "unified", n=args.n)
    if args.repeat_scores and args.explore_scores:
        return import_scores(args.repeat_scores, "combined", n=args.n,
                             explore_path=args.explore_scores)
    raise UsageError("no score input: pass --scores (unified) or both "
                     "--repeat-scores and --explore-scores (combined)")


def _make_config(args, cands: CandidateSet, reps, rep_ratio_gt: float | None
                 ) -> RerankConfig:
    kind = MODE_TO_KIND[args.mode]
    cfg = RerankConfig(
        k=args.k, n=args.n, epsilon=args.epsilon, alpha=args.alpha,
        lam=args.lam, theta=args.theta,
        theta_strict=not args.theta_inclusive,
        exposure=_exposure(args.exposure), omega=args.omega,
        recall_tolerance=getattr(args, "recall_tolerance", 0.10),
        objective_kind=kind, log_base=args.log_base)
    if args.sign == "auto":
        if rep_ratio_gt is None:
            raise UsageError("--sign auto needs --targets to estimate the "
                             "ground-truth repeat ratio")
        cfg.sign_mode = choose_sign_mode(original_topk(cands, cfg), reps,
                                         rep_ratio_gt)
    else:
        cfg.sign_mode = ("penalize_repeat" if args.sign == "penalize"
                         else "reward_repeat")
    return cfg


def _write_baskets_tsv(baskets: RerankedBaskets, repeat_of, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for uid in sorted(baskets.baskets):
            sel = baskets.baskets[uid]
            rep = repeat_of(uid)
            for rank, item in enumerate(sel.items, start=1):
                flag = 1 if item in rep else 0
                fh.write(f"{uid}\t{rank}\t{item}\t{flag}\n")


def read_baskets_tsv(path: str) -> dict[str, list[str]]:
    out: dict[str, list[tuple[int, str]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields")
            uid, rank, item, _flag = parts
            out.setdefault(uid, []).append((int(rank), item))
    return {u: [item for _, item in sorted(rows)] for u, rows in out.items()}


def _cmd_ingest(args) -> int:
    categories = load_categories(args.categories) if args.categories else {}
    ds = load_baskets(args.baskets, args.format, categories)
    if args.sample_users:
        ds = sample_users(ds, args.sample_users, args.seed)
    ds = filter_min_activity(ds, args.min_baskets, args.min_item_purchases)
    ds = cap_history(ds, args.max_baskets)
    train, validation, test = split_leave_last(ds, args.seed)
    reps = build_repeat_sets(train)
    meta = {
        "n_users": len(ds.users),
        "n_items": len(ds.item_vocabulary),
        "n_baskets": ds.n_baskets(),
        "dedup_count": ds.dedup_count,
        "seed": args.seed,
        "rep_ratio_gt_validation": ground_truth_repeat_ratio(validation, reps),
        "rep_ratio_gt_test": ground_truth_repeat_ratio(test, reps),
    }
    if args.dry_run:
        print(json.dumps(meta, indent=2))
        return 0
    import os
    os.makedirs(args.out, exist_ok=True)
    save_baskets(ds, os.path.join(args.out, "dataset.jsonl"))
    save_baskets(train, os.path.join(args.out, "train.jsonl"))
    save_targets(validation, os.path.join(args.out, "targets_validation.jsonl"))
    save_targets(test, os.path.join(args.out, "targets_test.jsonl"))
    save_categories(ds.categories, os.path.join(args.out, "categories.tsv"))
    with open(os.path.join(args.out, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
    print(json.dumps(meta, indent=2))
    return 0


def _cmd_score(args) -> int:
    import os
    train = load_baskets(args.train, "jsonl")
    reps = build_repeat_sets(train)
    if args.dry_run:
        print(f"would score {len(train.users)} users ({args.kind}, N={args.n})")
        return 0
    os.makedirs(args.out, exist_ok=True)
    if args.kind == "unified":
        cands = make_unified(score_repeat_topfreq(train, reps, args.n),
                             score_explore_popularity(train, reps, args.n),
                             mix=args.mix, n=args.n)
        save_scores(cands.unified, os.path.join(args.out, "unified.tsv"))
        print(f"wrote {os.path.join(args.out, 'unified.tsv')}")
    else:
        cands = make_combined(train, reps, args.n)
        save_scores(cands.repeat_list, os.path.join(args.out, "repeat.tsv"))
        save_scores(cands.explore_list, os.path.join(args.out, "explore.tsv"))
        print(f"wrote repeat.tsv and explore.tsv under {args.out}")
    return 0


def _load_common(args):
    categories = load_categories(args.categories) if args.categories else {}
    train = load_baskets(args.train, "jsonl", categories)
    reps = build_repeat_sets(train)
    groups = build_item_groups(train)
    cands = _load_candidates(args)
    absent = missing_users(cands, train.user_ids)
    if absent:
        print(f"warning: {len(absent)} train users missing from scores "
              f"(e.g. {absent[:3]})", file=sys.stderr)
    return train, categories, reps, groups, cands


def _cmd_rerank(args) -> int:
    train, categories, reps, groups, cands = _load_common(args)
    rep_ratio_gt = None
    if args.targets:
        targets = load_targets(args.targets, train)
        rep_ratio_gt = ground_truth_repeat_ratio(targets, reps)
    cfg = _make_config(args, cands, reps, rep_ratio_gt)
    if args.dry_run:
        print(json.dumps({"resolved_config": cfg.snapshot(),
                          "n_users": len(cands.user_ids)}, indent=2))
        return 0
    builder = (build_unified_problem if cands.kind == "unified"
               else build_combined_problem)
    problems = []
    for uid in cands.user_ids:
        try:
            problems.append(builder(uid, cands, reps, groups, categories, cfg))
        except DataError as exc:
            if args.skip_errors:
                print(f"warning: {exc}", file=sys.stderr)
            else:
                raise
    if args.dump_problems:
        with open(args.dump_problems, "w", encoding="utf-8") as fh:
            for problem in problems:
                fh.write(problem.to_json() + "\n")
    baskets = rerank_all(problems, engine=args.engine,
                         skip_errors=args.skip_errors,
                         config_snapshot=cfg.snapshot())
    for msg in baskets.warnings:
        print(f"warning: {msg}", file=sys.stderr)

    if cands.kind == "combined":
        pools = {u: {i for i, _ in rows}
                 for u, rows in cands.repeat_list.items()}
        repeat_of = lambda uid: pools.get(uid, set())  # noqa: E731
    else:
        repeat_of = lambda uid: reps.get(uid, frozenset())  # noqa: E731
    _write_baskets_tsv(baskets, repeat_of, args.out)
    if args.stats:
        stats = {
            "total_objective": baskets.total_objective,
            "per_user": {
                uid: {"objective": s.objective, "solver": s.solver_tag,
                      "optimal": s.optimal, "nodes": s.nodes,
                      "prunes": s.prunes, "wall_time": s.wall_time,
                      "bound_gap": s.bound_gap}
                for uid, s in sorted(baskets.baskets.items())},
        }
        with open(args.stats, "w", encoding="utf-8") as fh:
            json.dump(stats, fh, indent=2)
    print(f"reranked {len(baskets.baskets)} users -> {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    categories = load_categories(args.categories) if args.categories else {}
    train = load_baskets(args.train, "jsonl", categories)
    reps = build_repeat_sets(train)
    groups = build_item_groups(train)
    lists = read_baskets_tsv(args.baskets)
    targets = load_targets(args.targets, train)
    dropped = sorted(u for u in lists if u not in targets.eval_targets)
    if dropped:
        print(f"warning: {len(dropped)} users have no target in this split "
              f"and are excluded (e.g. {dropped[:3]})", file=sys.stderr)
        lists = {u: b for u, b in lists.items()
                 if u in targets.eval_targets}
    cfg = RerankConfig(k=args.k, n=max(args.k, 100), omega=args.omega,
                       exposure=_exposure(args.exposure),
                       log_base=args.log_base)
    if args.dry_run:
        print(json.dumps({"n_users": len(lists),
                          "resolved_config": cfg.snapshot()}, indent=2))
        return 0
    report = evaluate(lists, targets, reps, groups, categories, cfg,
                      per_user=bool(args.per_user))
    if args.per_user:
        with open(args.per_user, "w", encoding="utf-8") as fh:
            fh.write("user_id\trecall\tds\trep_ratio\n")
            for uid in sorted(report.per_user):
                row = report.per_user[uid]
                fh.write(f"{uid}\t{row['recall']:.6f}\t{row['ds']:.6f}"
                         f"\t{row['rep_ratio']:.6f}\n")
        report.per_user = None
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json(indent=2))
    print(report_table([("run", report)]))
    return 0


def _cmd_tune(args) -> int:
    train, categories, reps, groups, cands = _load_common(args)
    if args.mode not in ("radiv", "raif"):
        raise UsageError("tune supports --mode radiv or raif")
    targets = load_targets(args.targets, train)
    if targets.split_label != "validation":
        raise UsageError(f"tune needs validation targets, got "
                         f"{targets.split_label!r}")
    cfg = _make_config(args, cands, reps,
                       ground_truth_repeat_ratio(targets, reps))
    grid = GridSpec(
        epsilon_grid=args.epsilon_grid or GridSpec().epsilon_grid,
        alpha_grid=args.alpha_grid or GridSpec().alpha_grid,
        lambda_grid=args.lambda_grid or GridSpec().lambda_grid,
        theta_grid=args.theta_grid)
    if args.dry_run:
        n_weights = len(grid.epsilon_grid if args.mode == "radiv"
                        else grid.alpha_grid)
        second = (len(grid.lambda_grid) if cands.kind == "unified" else
                  len(grid.theta_grid or theta_deciles(cands)))
        print(json.dumps({"resolved_config": cfg.snapshot(),
                          "grid_points": n_weights * second}, indent=2))
        return 0
    result = run_grid(targets, cands, reps, groups, categories, cfg, grid,
                      engine=args.engine)
    if args.sweep_out:
        write_sweep_csv(result, args.sweep_out)
    if args.chosen_out:
        write_chosen_config(result, args.chosen_out)
    print(json.dumps({"best": result.best.snapshot(),
                      "feasible_count": result.feasible_count,
                      "infeasible": result.infeasible}, indent=2))
    return 0


def _cmd_report(args) -> int:
    reports = []
    for path in args.reports:
        with open(path, encoding="utf-8") as fh:
            reports.append((path, MetricsReport.from_dict(json.load(fh))))
    ks = {r.config.get("k") for _, r in reports}
    omegas = {r.config.get("omega") for _, r in reports}
    if len(ks) > 1:
        raise UsageError(f"reports mix basket sizes: {sorted(ks)}")
    if len(omegas) > 1:
        raise UsageError(f"reports mix omega values: {sorted(omegas)}")
    if args.dry_run:
        print(f"would tabulate {len(reports)} reports")
        return 0
    if args.markdown:
        table = _markdown_table(reports)
    else:
        table = report_table(reports)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(table + "\n")
    else:
        print(table)
    return 0


def _markdown_table(reports: list[tuple[str, MetricsReport]]) -> str:
    cols = [("Recall", "recall", max),
            ("DS", "ds", max),
            ("logDP", "log_dp", lambda vs: min(vs, key=abs)),
            ("RepR", "rep_ratio_rec", None),
            ("RepBias", "rep_bias", lambda vs: min(vs, key=abs)),
            ("mFR", "m_fr", min),
            ("mDR", "m_dr", max)]
    lines = ["| run | " + " | ".join(name for name, _, _ in cols) + " |",
             "|" + "---|" * (len(cols) + 1)]
    best = {}
    for name, attr, rule in cols:
        values = [getattr(r, attr) for _, r in reports]
        best[attr] = rule(values) if rule and len(values) > 1 else None
    for label, r in reports:
        cells = []
        for _, attr, _ in cols:
            v = getattr(r, attr)
            text = f"{v:.4f}"
            if best[attr] is not None and v == best[attr]:
                text = f"**{text}**"
            cells.append(text)
        lines.append(f"| {label} | " + " | ".join(cells) + " |")
    return "\n".join(lines)


_COMMANDS = {
    "ingest": _cmd_ingest,
    "score": _cmd_score,
    "rerank": _cmd_rerank,
    "evaluate": _cmd_evaluate,
    "tune": _cmd_tune,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(argv, parser)
        args = parser.parse_args(argv)
        return _COMMANDS[args.verb](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
