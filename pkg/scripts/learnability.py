"""Train the compact network on a default synthetic cohort, then run the planted-gap analysis.

    python3 scripts/learnability.py --n-subjects 2000 --epochs 30 --out runs/learnability
"""
import argparse
import json
import logging
import time
from pathlib import Path

from ctgage import experiments as E
from ctgage.synth import SynthSpec, generate_cohort


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-subjects", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--patience", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--cohort-seed", type=int, default=0)
    ap.add_argument("--budget-min", type=float, default=30.0)
    ap.add_argument("--out", default="runs/learnability")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    out = Path(args.out)
    started = time.process_time()
    cohort, oracle = generate_cohort(SynthSpec(n_subjects=args.n_subjects, seed=args.cohort_seed))
    cfg = E.compact_config(args.epochs, args.patience, args.seed)
    res = E.learnability(cohort, cfg, out_dir=out / "run", time_budget_s=args.budget_min * 60)
    gap = E.planted_gap(res.model, res.data, oracle, out / "analysis")
    outcomes = gap.analysis["outcomes"]
    summary = {
        "test": res.test.as_dict(),
        "mean_predictor_mae": res.mean_predictor_mae,
        "mae_ratio": res.mae_ratio,
        "best_epoch": res.best_epoch,
        "epochs_run": res.epochs_run,
        "cpu_minutes": (time.process_time() - started) / 60,
        "mean_gap": gap.mean_gap,
        "premature_percent": {b: outcomes.percent("premature", b) for b in outcomes.band_n},
        "premature_h_test_p": outcomes.h_tests["premature"].p,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
