"""Grid search with the two-condition selection rule: stay within the
Recall-drop tolerance of the unmodified baskets, then maximize mDR (for the
diversity program) or minimize mFR (for the fairness program)."""
from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field

from .dataset import ItemGroups, RepeatSets, SplitDataset, ground_truth_repeat_ratio
from .errors import DataError, UsageError
from .metrics import MetricsReport, evaluate
from .objective import (RerankConfig, build_combined_problem,
                        build_unified_problem, choose_sign_mode, original_topk)
from .scorer import CandidateSet
from .solver import rerank_all

DEFAULT_EPSILON_GRID = [0, 0.001, 0.01, 0.02, 0.04, 0.06, 0.08, 0.1,
                        0.12, 0.14, 0.16, 0.18, 0.2]
DEFAULT_ALPHA_GRID = [0, 0.001, 0.01, 0.1, 1, 10, 20, 30, 40, 50, 60, 70,
                      80, 90, 100, 200]
DEFAULT_LAMBDA_GRID = [0, 0.001, 0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7,
                       0.8, 0.9, 1]


@dataclass
class GridSpec:
    epsilon_grid: list[float] = field(default_factory=lambda: list(DEFAULT_EPSILON_GRID))
    alpha_grid: list[float] = field(default_factory=lambda: list(DEFAULT_ALPHA_GRID))
    lambda_grid: list[float] = field(default_factory=lambda: list(DEFAULT_LAMBDA_GRID))
    theta_grid: list[float] | None = None  # default: deciles of repeat scores

    def __post_init__(self) -> None:
        for name in ("epsilon_grid", "alpha_grid", "lambda_grid"):
            values = getattr(self, name)
            if not values:
                raise UsageError(f"{name} is empty")
            if any(v < 0 for v in values):
                raise UsageError(f"{name} contains negative values")
            setattr(self, name, sorted(set(values)))
        if self.theta_grid is not None:
            self.theta_grid = sorted(set(self.theta_grid))


def theta_deciles(cands: CandidateSet) -> list[float]:
    """Default theta candidates: deciles of the pooled repeat scores."""
    scores = sorted(s for rows in cands.repeat_list.values() for _, s in rows)
    if not scores:
        raise DataError("no repeat scores to derive theta candidates from")
    n = len(scores)
    deciles = []
    for q in range(1, 10):
        idx = min(n - 1, int(round(q / 10 * (n - 1))))
        deciles.append(scores[idx])
    return sorted(set(deciles))


@dataclass
class TuneResult:
    best: RerankConfig
    results: list[tuple[RerankConfig, MetricsReport]]
    baseline: MetricsReport
    feasible_count: int
    infeasible: bool


def _build_problems(cands: CandidateSet, reps: RepeatSets, groups: ItemGroups,
                    categories: dict[str, str], cfg: RerankConfig,
                    user_ids: list[str]):
    builder = build_unified_problem if cands.kind == "unified" else build_combined_problem
    return [builder(u, cands, reps, groups, categories, cfg) for u in user_ids]


def rerank_and_evaluate(cands: CandidateSet, split: SplitDataset,
                        reps: RepeatSets, groups: ItemGroups,
                        categories: dict[str, str], cfg: RerankConfig,
                        rep_ratio_gt: float, engine: str = "auto"
                        ) -> MetricsReport:
    users = sorted(set(cands.user_ids) & set(split.eval_targets))
    if not users:
        raise DataError("no overlap between candidate users and the split")
    problems = _build_problems(cands, reps, groups, categories, cfg, users)
    baskets = rerank_all(problems, engine=engine,
                         config_snapshot=cfg.snapshot())
    return evaluate(baskets, split, reps, groups, categories, cfg,
                    rep_ratio_gt=rep_ratio_gt)


def _grid_points(kind: str, cands_kind: str, grid: GridSpec,
                 theta_default: list[float]) -> list[tuple[float, float, float]]:
    """(weight, lambda, theta) tuples in deterministic lexicographic order."""
    weights = grid.epsilon_grid if kind == "radiv" else grid.alpha_grid
    if cands_kind == "unified":
        return [(w, lam, 0.0) for w in weights for lam in grid.lambda_grid]
    thetas = grid.theta_grid if grid.theta_grid is not None else theta_default
    return [(w, 0.0, th) for w in weights for th in thetas]


def run_grid(split: SplitDataset, cands: CandidateSet, reps: RepeatSets,
             groups: ItemGroups, categories: dict[str, str],
             cfg: RerankConfig, grid: GridSpec, engine: str = "auto"
             ) -> TuneResult:
    """Evaluate every grid point on the validation split and pick the best
    feasible one. Ties go to the lexicographically smallest
    (weight, lambda, theta) tuple; with no feasible point the baseline wins
    and the result is flagged infeasible."""
    if cfg.objective_kind not in ("radiv", "raif"):
        raise UsageError("run_grid tunes radiv or raif objectives only")
    if split.split_label != "validation":
        raise UsageError("tune on the validation split only")

    rep_ratio_gt = ground_truth_repeat_ratio(split, reps)
    theta_default = theta_deciles(cands) if cands.kind == "combined" else []

    base_theta = theta_default[0] if cands.kind == "combined" else 0.0
    sign_mode = choose_sign_mode(
        original_topk(cands, dataclasses.replace(cfg, theta=base_theta)),
        reps, rep_ratio_gt)

    def point_cfg(weight: float, lam: float, theta: float,
                  kind: str) -> RerankConfig:
        return dataclasses.replace(
            cfg,
            epsilon=weight if cfg.objective_kind == "radiv" else 0.0,
            alpha=weight if cfg.objective_kind == "raif" else 0.0,
            lam=lam, theta=theta, sign_mode=sign_mode, objective_kind=kind)

    baseline_cfg = point_cfg(0.0, 0.0, base_theta, "relevance_only")
    baseline = rerank_and_evaluate(cands, split, reps, groups, categories,
                                   baseline_cfg, rep_ratio_gt, engine)
    floor = (1.0 - cfg.recall_tolerance) * baseline.recall

    results: list[tuple[RerankConfig, MetricsReport]] = []
    best_cfg: RerankConfig | None = None
    best_score: float | None = None
    feasible = 0
    for weight, lam, theta in _grid_points(cfg.objective_kind, cands.kind,
                                           grid, theta_default):
        pcfg = point_cfg(weight, lam, theta, cfg.objective_kind)
        report = rerank_and_evaluate(cands, split, reps, groups, categories,
                                     pcfg, rep_ratio_gt, engine)
        results.append((pcfg, report))
        if report.recall < floor:
            continue
        feasible += 1
        score = report.m_dr if cfg.objective_kind == "radiv" else -report.m_fr
        if best_score is None or score > best_score:
            best_cfg, best_score = pcfg, score

    if best_cfg is None:
        return TuneResult(baseline_cfg, results, baseline, 0, True)
    return TuneResult(best_cfg, results, baseline, feasible, False)


def final_evaluate(best: RerankConfig, test: SplitDataset, cands: CandidateSet,
                   reps: RepeatSets, groups: ItemGroups,
                   categories: dict[str, str], engine: str = "auto",
                   objective_kind: str | None = None) -> MetricsReport:
    """Single frozen-config evaluation on the test split."""
    if objective_kind is not None and objective_kind != best.objective_kind:
        raise UsageError(
            f"objective kind mismatch: tuned {best.objective_kind!r}, "
            f"requested {objective_kind!r}")
    rep_ratio_gt = ground_truth_repeat_ratio(test, reps)
    return rerank_and_evaluate(cands, test, reps, groups, categories, best,
                               rep_ratio_gt, engine)


def write_sweep_csv(result: TuneResult, path: str) -> None:
    """One row per grid point with all metrics; feeds trade-off curves."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["objective_kind", "epsilon", "alpha", "lambda",
                         "theta", "recall", "ds", "logdp", "rep_ratio_rec",
                         "rep_bias", "m_fr", "m_dr"])
        for pcfg, report in result.results:
            writer.writerow([
                pcfg.objective_kind, pcfg.epsilon, pcfg.alpha, pcfg.lam,
                pcfg.theta, report.recall, report.ds, report.log_dp,
                report.rep_ratio_rec, report.rep_bias, report.m_fr,
                report.m_dr])


def write_chosen_config(result: TuneResult, path: str) -> None:
    payload = {
        "best": result.best.snapshot(),
        "feasible_count": result.feasible_count,
        "infeasible": result.infeasible,
        "baseline": result.baseline.to_dict(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
