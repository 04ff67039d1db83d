"""``ctgage`` command line: simulate, train, predict, evaluate, analyze, attend.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigFileError, dump_run_config, load_run_config, load_synth_spec
from .data import load_cohort, read_splits
from .model import load_checkpoint
from .synth import worker_count
from .train import evaluate, metrics_from_predictions


def _cohort(path):
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"cohort file not found: {p}")
    return load_cohort(p)


def cmd_simulate(args) -> int:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.n_subjects is not None:
        overrides.append(f"n_subjects={args.n_subjects}")
    spec = load_synth_spec(args.spec, overrides).validate()
    workers = args.workers if args.workers is not None else worker_count()
    cohort = pipeline.simulate(spec, args.out, workers=workers, spec_path=args.spec)
    print(f"wrote {len(cohort)} records to {Path(args.out) / 'cohort.jsonl'}")
    return 0


def cmd_train(args) -> int:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides += [f"train.seed={args.seed}", f"data.split_seed={args.seed}",
                      f"data.augment_seed={args.seed}"]
    cfg = load_run_config(args.config, overrides).validate()
    cohort = _cohort(args.cohort)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result, data = pipeline.run_training(cohort, cfg, out_dir=out, resume=args.resume)
    test_metrics = evaluate(result.model, data.test_records) if data.test_records else None
    pipeline.write_manifest(out, "train", _inputs(args, "cohort", "config"),
                            dump_run_config(cfg),
                            {"best_epoch": result.best_epoch, "best_val_mae": result.best_val_mae,
                             "epochs_run": len(result.history),
                             "test_metrics": test_metrics.as_dict() if test_metrics else None})
    print(f"best epoch {result.best_epoch}, val MAE {result.best_val_mae:.3f} days"
          + (f", test MAE {test_metrics.mae:.3f}" if test_metrics else ""))
    return 0


def _inputs(args, *names) -> dict:
    return {n: getattr(args, n) for n in names if getattr(args, n, None)}


def _records(args, cohort):
    splits = read_splits(args.splits) if getattr(args, "splits", None) else None
    if getattr(args, "split", None) and splits is None:
        raise ValueError("--split requires --splits")
    return pipeline.select_records(cohort, splits, getattr(args, "split", None))


def cmd_predict(args) -> int:
    model, _, _ = load_checkpoint(args.checkpoint)
    cohort = _cohort(args.cohort)
    records = _records(args, cohort)
    preds = pipeline.predict_records(model, records)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    pipeline.write_predictions(preds, records, out)
    pipeline.write_manifest(out.parent, "predict", _inputs(args, "checkpoint", "cohort", "splits"),
                            f"split={args.split}\n", name=out.name + ".manifest.json")
    print(f"wrote {len(preds)} predictions to {out}")
    return 0


def cmd_evaluate(args) -> int:
    cohort = _cohort(args.cohort)
    records = _records(args, cohort)
    if args.predictions:
        preds = pipeline.read_predictions(args.predictions)
        records = [r for r in records if r.record_id in preds]
        if not records:
            raise ValueError("no predictions match the cohort records")
        metrics = metrics_from_predictions([preds[r.record_id] for r in records],
                                           [r.actual_age_days for r in records])
    elif args.checkpoint:
        model, _, _ = load_checkpoint(args.checkpoint)
        metrics = evaluate(model, records)
    else:
        raise ValueError("evaluate needs --checkpoint or --predictions")
    text = json.dumps(metrics.as_dict(), sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n", encoding="utf-8")
        pipeline.write_manifest(out.parent, "evaluate",
                                _inputs(args, "checkpoint", "predictions", "cohort", "splits"),
                                f"split={args.split}\n", name=out.name + ".manifest.json")
    print(text)
    return 0


def cmd_analyze(args) -> int:
    cfg = load_run_config(args.config, args.set or [])
    cohort = _cohort(args.cohort)
    preds = pipeline.read_predictions(args.predictions)
    result = pipeline.analyze(preds, _records(args, cohort), args.out, cfg.stats)
    pipeline.write_manifest(args.out, "analyze", _inputs(args, "predictions", "cohort", "config", "splits"),
                            dump_run_config(cfg))
    print(json.dumps(result["summary"], sort_keys=True))
    return 0


def cmd_attend(args) -> int:
    model, _, _ = load_checkpoint(args.checkpoint)
    cohort = _cohort(args.cohort)
    records = _records(args, cohort)
    if args.records:
        wanted = set(args.records.split(","))
        records = [r for r in records if r.record_id in wanted]
    files = pipeline.attend(model, records, args.out, sigma=args.sigma, svg=args.svg)
    pipeline.write_manifest(args.out, "attend", _inputs(args, "checkpoint", "cohort", "splits"),
                            f"sigma={args.sigma!r}\nsvg={args.svg}\nsplit={args.split}\n")
    print(f"wrote {len(files)} files to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctgage", description="Gestational-age regression from CTG traces.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic cohort")
    s.add_argument("--spec", required=True, help="key=value SynthSpec file")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--n-subjects", type=int)
    s.add_argument("--workers", type=int, help="process count (default: CTGAGE_THREADS or 1)")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="screen, split, augment and train")
    s.add_argument("--cohort", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--resume", metavar="CKPT")
    s.add_argument("--seed", type=int)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="write record_id,ai_age,gap")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--cohort", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--splits")
    s.add_argument("--split")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="MAE, MSE and Pearson as JSON")
    s.add_argument("--cohort", required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--predictions")
    s.add_argument("--splits")
    s.add_argument("--split")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("analyze", help="gap bands, incidence tables, tests, curves")
    s.add_argument("--predictions", required=True)
    s.add_argument("--cohort", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--splits")
    s.add_argument("--split")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("attend", help="per-record attention CSV (and SVG)")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--cohort", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--sigma", type=float, default=8.0)
    s.add_argument("--svg", action="store_true")
    s.add_argument("--records", help="comma-separated record ids")
    s.add_argument("--splits")
    s.add_argument("--split")
    s.set_defaults(func=cmd_attend)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigFileError as exc:
        print(f"ctgage: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"ctgage {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
