"""Synthetic CTG cohorts with planted age structure and planted outcome effects.

The generative model for one 20-minute session at developmental age ``a``
(days) is::

    fhr(t) = baseline(a) + LTV(t) + stv(a) * e1(t) + bumps(t) + noise_sd * e2(t)

    baseline(a) = baseline_at_210 + baseline_slope * (a - 210)
    stv(a)      = stv_base + stv_slope * (a - 210)
    LTV(t)      = ltv_amplitude * sin(2 pi t / P + phi),  P ~ U(ltv_period_s), phi ~ U(0, 2 pi)

``e1``, ``e2`` are independent white N(0, 1) sequences. ``bumps`` holds
raised-cosine accelerations (+accel_amplitude over accel_duration_s) and
decelerations (-decel_amplitude over decel_duration_s) whose counts are
Poisson with rates accel_rate + accel_rate_slope * (a - 210) and decel_rate
(events per hour). Developmental age is thus identifiable from the level,
the beat-to-beat spread and the acceleration count of a trace.

Subjects carrying a planted disease label get developmental age = labeled
age + planted gap. Every subject draws each outcome flag once from
Bernoulli(sigmoid(intercept + coef * |gap| [+ boost])) where the optional
boost applies when the first session falls inside a gestational-week window.

These numbers are synthetic; they mimic textbook CTG trends and make no
clinical claim.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (MATERNAL_LABELS, OUTCOME_LABELS, Cohort, CtgRecord, MaternalFlags,
                   OutcomeFlags, clamp_fhr)

FS_HZ = 2.0


def _default_outcome_logit():
    return {
        "premature": (-4.0, 0.10),
        "low_birth_weight": (-4.0, 0.08),
        "neonatal_asphyxia": (-4.5, 0.05),
        "fetal_distress": (-4.5, 0.05),
        "malformation": (-5.0, 0.0),
        "congenital_heart_disease": (-5.0, 0.0),
    }


@dataclass
class SynthSpec:
    n_subjects: int = 2000
    sessions_per_subject: tuple = (1, 3)
    age_range_days: tuple = (210, 294)
    # labels inside dense_age_range are dense_ratio times as likely per day
    dense_age_range: tuple = (250, 270)
    dense_ratio: float = 1.0
    baseline_at_210: float = 150.0
    baseline_slope: float = -0.1
    stv_base: float = 5.0
    stv_slope: float = 0.02
    ltv_amplitude: float = 3.0
    ltv_period_s: tuple = (40.0, 120.0)
    accel_rate: float = 2.0
    accel_rate_slope: float = 0.05
    accel_amplitude: float = 15.0
    accel_duration_s: float = 30.0
    decel_rate: float = 0.5
    decel_amplitude: float = 20.0
    decel_duration_s: float = 45.0
    noise_sd: float = 1.0
    n_samples: int = 2400
    planted_gap_days: dict = field(default_factory=lambda: {"gdm": 25.0, "placental_lesion": -25.0})
    disease_prevalence: dict = field(default_factory=lambda: {"gdm": 0.06, "placental_lesion": 0.06})
    outcome_logit: dict = field(default_factory=_default_outcome_logit)
    # outcome -> (first week, last week, added logit) keyed on the first session's week
    outcome_age_boost: dict = field(default_factory=dict)
    short_record_fraction: float = 0.0
    seed: int = 0

    def baseline(self, age):
        return self.baseline_at_210 + self.baseline_slope * (np.asarray(age) - 210.0)

    def stv(self, age):
        return self.stv_base + self.stv_slope * (np.asarray(age) - 210.0)

    def accel_rate_at(self, age):
        return self.accel_rate + self.accel_rate_slope * (np.asarray(age) - 210.0)

    def validate(self) -> "SynthSpec":
        lo, hi = self.age_range_days
        if not (0 < lo < hi <= 294):
            raise ValueError(f"age_range_days must lie within (0, 294], got {self.age_range_days}")
        if self.n_subjects < 0:
            raise ValueError("n_subjects must be >= 0")
        smin, smax = self.sessions_per_subject
        if not (1 <= smin <= smax):
            raise ValueError(f"sessions_per_subject must satisfy 1 <= min <= max, got {self.sessions_per_subject}")
        ends = np.array([lo, hi], dtype=float)
        for name, vals in (("stv", self.stv(ends)), ("accel_rate", self.accel_rate_at(ends))):
            if np.any(vals < 0):
                raise ValueError(f"{name} must stay >= 0 over the age range")
        if self.decel_rate < 0 or self.noise_sd < 0 or self.ltv_amplitude < 0:
            raise ValueError("decel_rate, noise_sd and ltv_amplitude must be >= 0")
        b = self.baseline(ends)
        if np.any(b < 100) or np.any(b > 180):
            raise ValueError(f"baseline leaves [100, 180] bpm over the age range: {b}")
        if self.dense_ratio <= 0:
            raise ValueError("dense_ratio must be positive")
        for label, gap in self.planted_gap_days.items():
            if label not in MATERNAL_LABELS:
                raise ValueError(f"unknown disease label {label!r}")
            if abs(gap) >= hi - lo:
                raise ValueError(f"planted gap for {label} exceeds the age range")
        for label in self.disease_prevalence:
            if label not in MATERNAL_LABELS:
                raise ValueError(f"unknown disease label {label!r}")
        if sum(self.disease_prevalence.values()) > 1:
            raise ValueError("disease prevalences sum above 1")
        for label in list(self.outcome_logit) + list(self.outcome_age_boost):
            if label not in OUTCOME_LABELS:
                raise ValueError(f"unknown outcome label {label!r}")
        if self.n_samples < 1 or not (0 <= self.short_record_fraction <= 1):
            raise ValueError("n_samples must be >= 1 and short_record_fraction in [0, 1]")
        return self


@dataclass(frozen=True)
class OracleRow:
    record_id: str
    planted_gap_days: float
    developmental_age_days: float


def _raised_cosine(n: int) -> np.ndarray:
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / max(n - 1, 1)))


def deterministic_curve(spec: SynthSpec, age: float, n: int, period_s: float, phase: float) -> np.ndarray:
    """Baseline plus long-term-variability sinusoid."""
    t = np.arange(n) / FS_HZ
    return spec.baseline(age) + spec.ltv_amplitude * np.sin(2.0 * np.pi * t / period_s + phase)


def _place_events(rng, fhr, rate_per_hour, amplitude, duration_s):
    n = fhr.size
    width = max(int(round(duration_s * FS_HZ)), 1)
    hours = n / FS_HZ / 3600.0
    count = rng.poisson(max(rate_per_hour, 0.0) * hours)
    if width > n:
        return 0
    bump = amplitude * _raised_cosine(width)
    for start in rng.integers(0, n - width + 1, size=count):
        fhr[start:start + width] += bump
    return count


def generate_record(spec: SynthSpec, subject: str, developmental_age_days: float,
                    labeled_age_days: int, rng: np.random.Generator,
                    record_id: str | None = None, n_samples: int | None = None,
                    outcomes: OutcomeFlags | None = None,
                    maternal: MaternalFlags | None = None) -> CtgRecord:
    """One session; random draws happen in a fixed order so a seed fixes the trace."""
    lo, hi = spec.age_range_days
    if not (lo - 1e-9 <= developmental_age_days <= hi + 1e-9):
        raise ValueError(f"developmental age {developmental_age_days} outside {spec.age_range_days}")
    n = spec.n_samples if n_samples is None else n_samples
    a = float(developmental_age_days)
    period = rng.uniform(*spec.ltv_period_s)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    fhr = deterministic_curve(spec, a, n, period, phase)
    stv_noise = rng.standard_normal(n)
    white = rng.standard_normal(n)
    fhr += float(spec.stv(a)) * stv_noise
    _place_events(rng, fhr, float(spec.accel_rate_at(a)), spec.accel_amplitude, spec.accel_duration_s)
    _place_events(rng, fhr, spec.decel_rate, -spec.decel_amplitude, spec.decel_duration_s)
    fhr += spec.noise_sd * white
    fhr, _ = clamp_fhr(fhr)
    return CtgRecord(
        record_id=record_id or f"{subject}-r",
        subject_id=subject,
        fhr=fhr,
        actual_age_days=int(labeled_age_days),
        outcomes=outcomes or OutcomeFlags(),
        maternal=maternal or MaternalFlags(),
    )


def _label_weights(spec: SynthSpec, lo: int, hi: int) -> tuple[np.ndarray, np.ndarray]:
    days = np.arange(lo, hi + 1)
    dlo, dhi = spec.dense_age_range
    w = np.where((days >= dlo) & (days <= dhi), spec.dense_ratio, 1.0)
    return days, w / w.sum()


def _sigmoid(z: float) -> float:
    return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


def _generate_subject(spec: SynthSpec, index: int):
    """All records of subject ``index``; depends only on (spec.seed, index)."""
    ss = np.random.SeedSequence(spec.seed, spawn_key=(index,))
    rng = np.random.default_rng(ss)
    subject = f"S{index:06d}"
    lo, hi = spec.age_range_days

    labels = list(spec.disease_prevalence)
    probs = np.array([spec.disease_prevalence[k] for k in labels] + [0.0])
    probs[-1] = max(0.0, 1.0 - probs[:-1].sum())
    choice = rng.choice(len(probs), p=probs / probs.sum())
    disease = labels[choice] if choice < len(labels) else None
    gap = float(spec.planted_gap_days.get(disease, 0.0)) if disease else 0.0

    # labeled ages keep developmental age inside the age range
    llo, lhi = int(math.ceil(lo - min(gap, 0.0))), int(math.floor(hi - max(gap, 0.0)))
    days, w = _label_weights(spec, llo, lhi)
    n_sess = int(rng.integers(spec.sessions_per_subject[0], spec.sessions_per_subject[1] + 1))
    ages = np.sort(rng.choice(days, size=n_sess, p=w))

    flags = {}
    first_week = int(ages[0]) // 7
    for label in OUTCOME_LABELS:
        intercept, coef = spec.outcome_logit.get(label, (-np.inf, 0.0))
        z = intercept + coef * abs(gap)
        boost = spec.outcome_age_boost.get(label)
        if boost is not None and boost[0] <= first_week <= boost[1]:
            z += boost[2]
        p = 0.0 if not np.isfinite(z) else _sigmoid(z)
        flags[label] = bool(rng.random() < p)
    outcomes = OutcomeFlags(**flags)
    maternal = MaternalFlags(**({disease: True} if disease else {}))

    records, oracle = [], []
    for j, age in enumerate(ages):
        rid = f"{subject}-{j:02d}"
        rec_rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(index, j + 1)))
        short = spec.short_record_fraction > 0 and rec_rng.random() < spec.short_record_fraction
        n = int(rec_rng.integers(600, 1800)) if short else spec.n_samples
        dev = float(age) + gap
        records.append(generate_record(spec, subject, dev, int(age), rec_rng, record_id=rid,
                                       n_samples=n, outcomes=outcomes, maternal=maternal))
        oracle.append(OracleRow(rid, gap, dev))
    return records, oracle


def _generate_range(args):
    spec, start, stop = args
    out = []
    for i in range(start, stop):
        out.append(_generate_subject(spec, i))
    return out


def worker_count(default: int = 1) -> int:
    env = os.environ.get("CTGAGE_THREADS")
    if env:
        return max(1, int(env))
    return default


def generate_cohort(spec: SynthSpec, workers: int = 1) -> tuple[Cohort, list]:
    """Generate ``spec.n_subjects`` subjects; result is independent of ``workers``."""
    spec.validate()
    n = spec.n_subjects
    workers = max(1, min(workers, n)) if n else 1
    if workers == 1:
        parts = [_generate_range((spec, 0, n))]
    else:
        bounds = np.linspace(0, n, workers + 1).astype(int)
        jobs = [(spec, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_generate_range, jobs))
    records, oracle = [], []
    for part in parts:
        for recs, orc in part:
            records.extend(recs)
            oracle.extend(orc)
    return Cohort(records=records, seed=spec.seed), oracle


def write_oracle(oracle, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "planted_gap_days", "developmental_age_days"])
        for row in oracle:
            w.writerow([row.record_id, repr(float(row.planted_gap_days)),
                        repr(float(row.developmental_age_days))])


def read_oracle(path) -> dict:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        return {r["record_id"]: OracleRow(r["record_id"], float(r["planted_gap_days"]),
                                          float(r["developmental_age_days"]))
                for r in csv.DictReader(fh)}


# ---------------------------------------------------------------- oracle regression

def trace_features(fhr: np.ndarray) -> np.ndarray:
    """(median level, beat-to-beat spread, acceleration count) of one trace."""
    fhr = np.asarray(fhr, dtype=np.float64)
    level = np.median(fhr)
    spread = np.std(np.diff(fhr)) / math.sqrt(2.0)
    smooth = np.convolve(fhr, np.ones(10) / 10, mode="same")
    above = smooth > level + 7.5
    count = int(np.count_nonzero(above[1:] & ~above[:-1]))
    return np.array([level, spread, count], dtype=np.float64)


def fit_age_oracle(fhrs, ages) -> np.ndarray:
    """Least-squares coefficients mapping ``trace_features`` (+ intercept) to age."""
    X = np.array([trace_features(f) for f in fhrs])
    X = np.column_stack([X, np.ones(len(X))])
    coef, *_ = np.linalg.lstsq(X, np.asarray(ages, dtype=np.float64), rcond=None)
    return coef


def oracle_age(coef: np.ndarray, fhr) -> float:
    return float(np.append(trace_features(fhr), 1.0) @ coef)
