"""End-to-end stages shared by the command line and the experiment scripts."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .augment import build_eval_set, build_training_set, center_window, record_signal
from .config import RunConfig, dump_run_config, dump_synth_spec
from .data import (TEST, TRAIN, VAL, Cohort, MATERNAL_LABELS, OUTCOME_LABELS, screen_cohort,
                   split_cohort, write_cohort, write_splits)
from .interpret import AttentionSeries, attention, export_attention
from .loss import build_prior, dump_prior
from .model import build, input_gradient, load_checkpoint, predict
from .stats import (gap_records, heatmap_bins, incidence_table, risk_curve, write_gap_table,
                    write_heatmap, write_risk_curve, write_tests)
from .synth import SynthSpec, generate_cohort, write_oracle
from .train import TrainResult, adam_state_from_checkpoint, read_history, train

log = logging.getLogger(__name__)


def sha256(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command: str, inputs: dict, config_text: str = "", extra=None,
                   name: str = "manifest.json") -> None:
    """Deterministic run manifest: no timestamps, only content hashes and settings."""
    manifest = {
        "tool": "ctgage",
        "version": __version__,
        "command": command,
        "inputs": {k: {"path": str(v), "sha256": sha256(v)} for k, v in sorted(inputs.items())},
        "config": config_text,
    }
    if extra:
        manifest.update(extra)
    Path(out_dir, name).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                              encoding="utf-8")


# ---------------------------------------------------------------- simulate

def simulate(spec: SynthSpec, out_dir, workers: int = 1, spec_path=None) -> Cohort:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cohort, oracle = generate_cohort(spec, workers=workers)
    write_cohort(cohort, out_dir / "cohort.jsonl")
    write_oracle(oracle, out_dir / "oracle.csv")
    write_manifest(out_dir, "simulate", {"spec": spec_path} if spec_path else {},
                   dump_synth_spec(spec))
    return cohort


# ---------------------------------------------------------------- train

@dataclass
class PreparedData:
    cohort: Cohort
    train_records: list
    val_records: list
    test_records: list
    train_set: tuple
    val_set: tuple


def prepare(cohort: Cohort, cfg: RunConfig) -> PreparedData:
    screened = screen_cohort(cohort)
    split = split_cohort(screened, cfg.data.split_seed, cfg.data.ratios)
    tr, va, te = split.in_split(TRAIN), split.in_split(VAL), split.in_split(TEST)
    c = cfg.model.in_channels
    train_set = build_training_set(tr, cfg.augment, cfg.data.augment_seed, in_channels=c)
    val_set = build_eval_set(va, cfg.model.input_len, in_channels=c)
    return PreparedData(split, tr, va, te, train_set, val_set)


def run_training(cohort: Cohort, cfg: RunConfig, out_dir=None, resume=None,
                 time_budget_s=None, model_seed: int | None = None) -> tuple[TrainResult, PreparedData]:
    cfg.validate()
    data = prepare(cohort, cfg)
    prior = build_prior([r.actual_age_days for r in data.train_records], step=cfg.prior.step,
                        epsilon=cfg.prior.epsilon, shrink=cfg.prior.shrink)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_splits(data.cohort, out_dir / "splits.csv")
        dump_prior(prior, out_dir / "prior.csv")
        (out_dir / "effective_config.txt").write_text(dump_run_config(cfg), encoding="utf-8")
    kwargs = {}
    if resume:
        model, extra, arrays = load_checkpoint(resume)
        kwargs["start_epoch"] = int(extra["epoch"]) + 1
        kwargs["adam_state"] = adam_state_from_checkpoint(extra, arrays)
        hist_path = Path(resume).with_name("history.csv")
        if hist_path.exists():
            kwargs["history"] = [h for h in read_history(hist_path) if h["epoch"] < kwargs["start_epoch"]]
        best_path = Path(resume).with_name("best.ckpt")
        if best_path.exists():
            kwargs["best_state"] = load_checkpoint(best_path)[0].state_arrays()
        model.train()
    else:
        seed = cfg.train.seed if model_seed is None else model_seed
        model = build(cfg.model, seed=seed)
    result = train(model, data.train_set, data.val_set, prior, cfg.loss, cfg.train,
                   out_dir=out_dir, time_budget_s=time_budget_s, **kwargs)
    return result, data


# ---------------------------------------------------------------- predict / evaluate

def predict_records(model, records) -> dict:
    if not records:
        return {}
    X, _ = build_eval_set(records, model.config.input_len, in_channels=model.config.in_channels)
    preds = predict(model.eval(), X)
    return {r.record_id: float(p) for r, p in zip(records, preds)}


def write_predictions(predictions: dict, records, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "ai_age", "gap"])
        for r in records:
            if r.record_id in predictions:
                ai = predictions[r.record_id]
                w.writerow([r.record_id, repr(ai), repr(ai - r.actual_age_days)])


def read_predictions(path) -> dict:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        return {row["record_id"]: float(row["ai_age"]) for row in csv.DictReader(fh)}


def select_records(cohort: Cohort, splits: dict | None, split: str | None) -> list:
    records = screen_cohort(cohort).records
    if splits is not None and split:
        # split names match case-insensitively, so "test" selects "Test"
        want = split.lower()
        records = [r for r in records if want in {s.lower() for s in splits.get(r.record_id, ())}]
    return records


# ---------------------------------------------------------------- analyze

def analyze(predictions: dict, records, out_dir, stats_cfg=None) -> dict:
    from .config import StatsConfig

    stats_cfg = stats_cfg or StatsConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    gaps = gap_records(predictions, records)
    if not gaps:
        raise ValueError("no predictions match the cohort records")
    outcome_table = incidence_table(gaps, OUTCOME_LABELS)
    maternal_table = incidence_table(gaps, MATERNAL_LABELS)
    write_gap_table(outcome_table, out_dir / "table_outcomes.csv")
    write_gap_table(maternal_table, out_dir / "table_maternal.csv")
    write_tests(outcome_table, out_dir / "tests_outcomes.csv")
    write_tests(maternal_table, out_dir / "tests_maternal.csv")
    gap_arr = np.array([g.gap for g in gaps])
    ages = np.array([g.actual_age for g in gaps])
    with (out_dir / "gaps.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "ai_age", "actual_age", "gap", "band", "high_risk"])
        for g in gaps:
            w.writerow([g.record_id, repr(g.ai_age), g.actual_age, repr(g.gap), g.band, int(g.high_risk)])
    curves_dir = out_dir / "curves"
    curves_dir.mkdir(exist_ok=True)
    for label in OUTCOME_LABELS + MATERNAL_LABELS:
        flags = np.array([g.flag(label) for g in gaps])
        bins = risk_curve(gap_arr, flags, stats_cfg.bin_width, stats_cfg.smoothing_window,
                          stats_cfg.min_support)
        write_risk_curve(bins, curves_dir / f"risk_{label}.csv")
        write_heatmap(heatmap_bins(gap_arr, ages, flags), curves_dir / f"heatmap_{label}.csv")
    summary = {
        "n_records": len(gaps),
        "band_n": outcome_table.band_n,
        "high_risk": int(sum(g.high_risk for g in gaps)),
        "mean_gap": float(gap_arr.mean()),
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
    return {"summary": summary, "outcomes": outcome_table, "maternal": maternal_table}


# ---------------------------------------------------------------- attend

def attend(model, records, out_dir, sigma: float = 8.0, svg: bool = False) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.eval()
    written = []
    preds = predict_records(model, records)
    for r in records:
        sig = center_window(record_signal(r, model.config.in_channels), model.config.input_len)
        grad = input_gradient(model, sig[None, :, :])
        series = AttentionSeries(attention(grad, sigma), sigma, r.record_id, preds[r.record_id],
                                 preds[r.record_id] - r.actual_age_days)
        written.append(export_attention(sig[0], series, out_dir / f"{r.record_id}.attention.csv", "csv"))
        if svg:
            written.append(export_attention(sig[0], series, out_dir / f"{r.record_id}.attention.svg", "svg"))
    return written
