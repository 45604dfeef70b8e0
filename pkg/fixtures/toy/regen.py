"""Regenerate the committed toy fixture (12 users, 30 items, 5 categories).

Run from the repo root:  python3 fixtures/toy/regen.py
The golden rerank output is produced by the brute-force oracle.
"""
import os
import subprocess
import sys

from basket_rerank.dataset import (build_repeat_sets, save_baskets,
                                   save_categories, save_targets,
                                   split_leave_last)
from basket_rerank.scorer import (make_unified, save_scores,
                                  score_explore_popularity,
                                  score_repeat_topfreq)
from basket_rerank.synth import make_toy_fixture

HERE = os.path.dirname(os.path.abspath(__file__))
SEED = 7
N = 15
K = 5


def main() -> None:
    ds = make_toy_fixture()
    save_baskets(ds, os.path.join(HERE, "baskets.jsonl"))
    save_categories(ds.categories, os.path.join(HERE, "categories.tsv"))

    train, validation, test = split_leave_last(ds, SEED)
    save_baskets(train, os.path.join(HERE, "train.jsonl"))
    save_targets(validation, os.path.join(HERE, "targets_validation.jsonl"))
    save_targets(test, os.path.join(HERE, "targets_test.jsonl"))

    reps = build_repeat_sets(train)
    repeat_scores = score_repeat_topfreq(train, reps, N)
    explore_scores = score_explore_popularity(train, reps, N)
    cands = make_unified(repeat_scores, explore_scores, mix=0.5, n=N)
    save_scores(cands.unified, os.path.join(HERE, "scores_unified.tsv"))
    save_scores(repeat_scores, os.path.join(HERE, "scores_repeat.tsv"))
    save_scores(explore_scores, os.path.join(HERE, "scores_explore.tsv"))

    with open(os.path.join(HERE, "toy.cfg"), "w", encoding="utf-8") as fh:
        fh.write(f"k = {K}\nn = {N}\nexposure = log-discount\n")

    subprocess.run([
        sys.executable, "-m", "basket_rerank.cli",
        "rerank", "--mode", "radiv", "--epsilon", "0.1", "--lambda", "0.1",
        "--k", str(K), "--n", str(N), "--engine", "bruteforce",
        "--train", os.path.join(HERE, "train.jsonl"),
        "--categories", os.path.join(HERE, "categories.tsv"),
        "--scores", os.path.join(HERE, "scores_unified.tsv"),
        "--out", os.path.join(HERE, "golden_radiv_e0.1_l0.1.tsv"),
    ], check=True)


if __name__ == "__main__":
    main()
