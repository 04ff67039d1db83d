"""CTG records, cohort file I/O, screening and subject-level splitting."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

FHR_MIN, FHR_MAX = 30.0, 250.0
MIN_SAMPLES = 1800
MAX_AGE_DAYS = 42 * 7

TRAIN, VAL, TEST, CLINICAL = "Train", "Val", "Test", "ClinicalEval"


class SizingError(ValueError):
    pass


@dataclass(frozen=True)
class OutcomeFlags:
    premature: bool = False
    low_birth_weight: bool = False
    neonatal_asphyxia: bool = False
    fetal_distress: bool = False
    malformation: bool = False
    congenital_heart_disease: bool = False

    def any(self) -> bool:
        return any(getattr(self, f.name) for f in fields(self))


@dataclass(frozen=True)
class MaternalFlags:
    gdm: bool = False
    anaemia: bool = False
    maternal_congenital: bool = False
    umbilical_cord: bool = False
    placental_lesion: bool = False

    def any(self) -> bool:
        return any(getattr(self, f.name) for f in fields(self))


OUTCOME_LABELS = tuple(f.name for f in fields(OutcomeFlags))
MATERNAL_LABELS = tuple(f.name for f in fields(MaternalFlags))


@dataclass
class CtgRecord:
    record_id: str
    subject_id: str
    fhr: np.ndarray
    actual_age_days: int
    outcomes: OutcomeFlags = field(default_factory=OutcomeFlags)
    maternal: MaternalFlags = field(default_factory=MaternalFlags)
    ua: Optional[np.ndarray] = None

    def __post_init__(self):
        self.fhr = np.asarray(self.fhr, dtype=np.float64)
        if self.fhr.ndim != 1 or self.fhr.size < 1:
            raise ValueError(f"{self.record_id}: fhr must be a non-empty 1-D series")
        if not np.all(np.isfinite(self.fhr)):
            raise ValueError(f"{self.record_id}: fhr contains non-finite values")
        if self.ua is not None:
            self.ua = np.asarray(self.ua, dtype=np.float64)
            if self.ua.shape != self.fhr.shape:
                raise ValueError(f"{self.record_id}: ua length {self.ua.size} != fhr length {self.fhr.size}")
        if int(self.actual_age_days) <= 0:
            raise ValueError(f"{self.record_id}: actual_age_days must be positive")
        self.actual_age_days = int(self.actual_age_days)

    @property
    def normal(self) -> bool:
        return not (self.outcomes.any() or self.maternal.any())


@dataclass
class ParseReport:
    loaded: int = 0
    clamped: int = 0
    rejected: int = 0
    rejected_lines: list = field(default_factory=list)


@dataclass
class Cohort:
    records: list
    split_of: dict = field(default_factory=dict)
    seed: int = 0
    report: ParseReport = field(default_factory=ParseReport)

    def __post_init__(self):
        ids = [r.record_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("record_id values must be unique")

    def __len__(self):
        return len(self.records)

    def by_id(self) -> dict:
        return {r.record_id: r for r in self.records}

    def in_split(self, name: str) -> list:
        """Records whose assignment includes ``name`` (Test records are also ClinicalEval)."""
        return [r for r in self.records if name in self.split_of.get(r.record_id, ())]


def clamp_fhr(fhr: np.ndarray) -> tuple[np.ndarray, int]:
    fhr = np.asarray(fhr, dtype=np.float64)
    n = int(np.count_nonzero((fhr < FHR_MIN) | (fhr > FHR_MAX)))
    return np.clip(fhr, FHR_MIN, FHR_MAX), n


def _flags(cls, obj):
    obj = obj or {}
    if not isinstance(obj, dict):
        raise ValueError(f"{cls.__name__} must be an object")
    unknown = set(obj) - {f.name for f in fields(cls)}
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for f in fields(cls):
        v = obj.get(f.name, False)
        if not isinstance(v, bool):
            raise ValueError(f"flag {f.name} must be boolean")
        kwargs[f.name] = v
    return cls(**kwargs)


def parse_record(line: str) -> tuple[CtgRecord, int]:
    """Parse one JSON line; returns the record and the number of clamped samples."""
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ValueError("line is not a JSON object")
    age = obj["actual_age_days"]
    if isinstance(age, bool) or not isinstance(age, int):
        raise ValueError("actual_age_days must be an integer")
    fhr = np.asarray(obj["fhr"], dtype=np.float64)
    fhr, n_clamped = clamp_fhr(fhr)
    ua = obj.get("ua")
    rec = CtgRecord(
        record_id=str(obj["record_id"]),
        subject_id=str(obj["subject_id"]),
        fhr=fhr,
        ua=None if ua is None else np.asarray(ua, dtype=np.float64),
        actual_age_days=age,
        outcomes=_flags(OutcomeFlags, obj.get("outcomes")),
        maternal=_flags(MaternalFlags, obj.get("maternal")),
    )
    return rec, n_clamped


def load_cohort(path) -> Cohort:
    """Read a line-delimited JSON cohort file.

    Malformed lines are skipped and counted in ``cohort.report``; samples
    outside [30, 250] bpm are clamped and counted.
    """
    path = Path(path)
    records, report, seen = [], ParseReport(), set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec, n_clamped = parse_record(line)
                if rec.record_id in seen:
                    raise ValueError(f"duplicate record_id {rec.record_id}")
            except (ValueError, KeyError, TypeError) as exc:
                report.rejected += 1
                report.rejected_lines.append(lineno)
                log.warning("%s:%d rejected: %s", path, lineno, exc)
                continue
            seen.add(rec.record_id)
            records.append(rec)
            report.loaded += 1
            report.clamped += n_clamped
    return Cohort(records=records, report=report)


def _fmt(x: float) -> float | int:
    # integral floats written as ints keep files compact; round-trip is exact either way
    return int(x) if float(x).is_integer() and abs(x) < 2**53 else float(x)


def record_to_json(rec: CtgRecord) -> str:
    obj = {
        "record_id": rec.record_id,
        "subject_id": rec.subject_id,
        "fhr": [_fmt(v) for v in rec.fhr.tolist()],
        "actual_age_days": rec.actual_age_days,
        "outcomes": asdict(rec.outcomes),
        "maternal": asdict(rec.maternal),
    }
    if rec.ua is not None:
        obj["ua"] = [_fmt(v) for v in rec.ua.tolist()]
    return json.dumps(obj, separators=(",", ":"))


def write_cohort(cohort_or_records, path) -> None:
    records = cohort_or_records.records if isinstance(cohort_or_records, Cohort) else cohort_or_records
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(record_to_json(rec))
            fh.write("\n")


def screen(record: CtgRecord) -> bool:
    return record.fhr.size >= MIN_SAMPLES and record.actual_age_days <= MAX_AGE_DAYS


def screen_cohort(cohort: Cohort) -> Cohort:
    kept = [r for r in cohort.records if screen(r)]
    return Cohort(records=kept, seed=cohort.seed, report=cohort.report)


def split_cohort(cohort: Cohort, seed: int, ratios=(8, 1, 1)) -> Cohort:
    """Assign screened records to Train/Val/Test (normal subjects) and ClinicalEval.

    Normal subjects are shuffled with ``seed`` and cut into contiguous blocks
    proportional to ``ratios``; a subject with any flagged record is not a
    normal subject. Test records are also marked ClinicalEval.
    """
    if len(ratios) != 3 or any(int(r) != r or r <= 0 for r in ratios):
        raise ValueError(f"ratios must be three positive integers, got {ratios}")
    subjects: dict[str, list] = {}
    for r in cohort.records:
        subjects.setdefault(r.subject_id, []).append(r)
    normal_subjects = sorted(s for s, recs in subjects.items() if all(r.normal for r in recs))
    n = len(normal_subjects)
    if n < 10:
        raise SizingError(f"need at least 10 normal subjects to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [normal_subjects[i] for i in order]
    total = sum(ratios)
    n_train = int(round(n * ratios[0] / total))
    n_val = int(round(n * ratios[1] / total))
    n_val = max(1, min(n_val, n - n_train - 1))
    n_train = min(n_train, n - n_val - 1)
    assignment = {}
    for i, subj in enumerate(shuffled):
        name = TRAIN if i < n_train else VAL if i < n_train + n_val else TEST
        assignment[subj] = (name, CLINICAL) if name == TEST else (name,)
    split_of = {}
    for subj, recs in subjects.items():
        marks = assignment.get(subj, (CLINICAL,))
        for r in recs:
            split_of[r.record_id] = marks
    return Cohort(records=cohort.records, split_of=split_of, seed=seed, report=cohort.report)


def write_splits(cohort: Cohort, path) -> None:
    """CSV ``record_id,split``; a record in several splits gets one row per split."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "split"])
        for r in cohort.records:
            for name in cohort.split_of.get(r.record_id, ()):
                w.writerow([r.record_id, name])


def read_splits(path) -> dict:
    out: dict[str, tuple] = {}
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["record_id"]] = out.get(row["record_id"], ()) + (row["split"],)
    return out
