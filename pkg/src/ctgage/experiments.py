"""Synthetic end-to-end experiments shared by the acceptance suite and scripts/.

Each experiment trains the compact network on a generated cohort and
returns plain numbers, so callers decide what counts as success.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import pipeline
from .config import RunConfig, load_run_config
from .data import CLINICAL, Cohort
from .synth import SynthSpec
from .train import Metrics, evaluate, metrics_from_predictions

log = logging.getLogger(__name__)


def compact_config(max_epochs: int = 30, patience: int = 20, seed: int = 0, overrides=()) -> RunConfig:
    """Compact network, one seed for training, splitting and augmentation."""
    cfg = load_run_config(overrides=["model.preset=compact", f"train.max_epochs={max_epochs}",
                                     f"train.early_stop_patience={patience}", f"train.seed={seed}",
                                     f"data.split_seed={seed}", f"data.augment_seed={seed}",
                                     *overrides])
    return cfg.validate()


# ---------------------------------------------------------------- learnability

@dataclass
class LearnabilityResult:
    test: Metrics
    mean_predictor_mae: float
    best_epoch: int
    epochs_run: int
    seconds: float
    model: object = field(repr=False)
    data: object = field(repr=False)

    @property
    def mae_ratio(self) -> float:
        return self.test.mae / self.mean_predictor_mae


def learnability(cohort: Cohort, cfg: RunConfig, out_dir=None, time_budget_s=None) -> LearnabilityResult:
    """Train on the Train split and score the Test split against the train-mean predictor."""
    result, data = pipeline.run_training(cohort, cfg, out_dir=out_dir, time_budget_s=time_budget_s)
    test = evaluate(result.model, data.test_records)
    y_train = np.array([r.actual_age_days for r in data.train_records], dtype=np.float64)
    y_test = np.array([r.actual_age_days for r in data.test_records], dtype=np.float64)
    mean_mae = metrics_from_predictions(np.full(y_test.size, y_train.mean()), y_test).mae
    return LearnabilityResult(test, mean_mae, result.best_epoch, len(result.history), result.seconds,
                              result.model, data)


# ---------------------------------------------------------------- planted gap

@dataclass
class PlantedGapResult:
    mean_gap: dict          # maternal label -> mean predicted gap of its records
    n_records: dict
    analysis: dict          # output of pipeline.analyze


def planted_gap(model, data, oracle, out_dir) -> PlantedGapResult:
    """Predict every ClinicalEval record and run the gap analysis on them."""
    records = data.cohort.in_split(CLINICAL)
    preds = pipeline.predict_records(model, records)
    planted = {row.record_id: row.planted_gap_days for row in oracle}
    groups = {}
    for r in records:
        g = planted.get(r.record_id, 0.0)
        if g != 0.0:
            label = next(k for k, v in vars(r.maternal).items() if v)
            groups.setdefault(label, []).append(preds[r.record_id] - r.actual_age_days)
    analysis = pipeline.analyze(preds, records, out_dir)
    return PlantedGapResult({k: float(np.mean(v)) for k, v in groups.items()},
                            {k: len(v) for k, v in groups.items()}, analysis)


# ---------------------------------------------------------------- imbalance

def skewed_spec(n_subjects: int, seed: int, ratio: float = 10.0, **signal) -> SynthSpec:
    """Normal subjects only, labels `ratio` times denser on 250-270 days.

    ``signal`` overrides trace parameters (e.g. a flatter baseline slope for a harder task).
    """
    return SynthSpec(n_subjects=n_subjects, dense_ratio=ratio, dense_age_range=(250, 270),
                     disease_prevalence={}, planted_gap_days={}, seed=seed, **signal)


def tail_spec(n_subjects: int, seed: int, tail_start: int = 285, **signal) -> SynthSpec:
    """Independent normal cohort with every label in the tail band."""
    return SynthSpec(n_subjects=n_subjects, age_range_days=(tail_start, 294), disease_prevalence={},
                     planted_gap_days={}, seed=seed, **signal)


@dataclass
class ImbalanceResult:
    tail_mae: dict          # lambda_dist -> list of tail MAE, one per seed
    overall_mae: dict       # lambda_dist -> list of test MAE on the skewed cohort
    seeds: tuple

    def reductions(self, with_dist: float, without: float) -> list:
        return [1.0 - a / b for a, b in zip(self.tail_mae[with_dist], self.tail_mae[without])]

    def median_reduction(self, with_dist: float = 0.5, without: float = 0.0) -> float:
        return float(np.median(self.reductions(with_dist, without)))


def imbalance(train_cohort: Cohort, tail_records: list, seeds=(0, 1, 2), lambdas=(0.5, 0.0),
              max_epochs: int = 12, patience: int = 12, overrides=()) -> ImbalanceResult:
    """Same cohort, seed and epoch budget per arm; only ``loss.lambda_dist`` differs."""
    tail, overall = {lam: [] for lam in lambdas}, {lam: [] for lam in lambdas}
    for seed in seeds:
        for lam in lambdas:
            cfg = compact_config(max_epochs, patience, seed, [f"loss.lambda_dist={lam!r}", *overrides])
            result, data = pipeline.run_training(train_cohort, cfg)
            tail[lam].append(evaluate(result.model, tail_records).mae)
            overall[lam].append(evaluate(result.model, data.test_records).mae)
            log.info("seed %d lambda_dist %g: tail MAE %.3f, test MAE %.3f", seed, lam,
                     tail[lam][-1], overall[lam][-1])
    return ImbalanceResult(tail, overall, tuple(seeds))

