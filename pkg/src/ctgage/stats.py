"""CTGage-gap stratification, incidence tables, significance tests, risk curves, heat maps.

The special functions (regularised incomplete beta and gamma) are evaluated
with modified Lentz continued fractions / power series, so the statistical
core has no dependency beyond the standard library and numpy.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import MATERNAL_LABELS, OUTCOME_LABELS

BANDS = ("LT_m21", "m21_m7", "m7_7", "7_21", "GT_21")
CENTRAL = "m7_7"
HIGH_RISK = ("LT_m21", "GT_21")
PAIRWISE = (("LT_m21", "m7_7"), ("GT_21", "m7_7"), ("LT_m21", "GT_21"))

_MAX_ITER = 1000
_EPS = 1e-16
_TINY = 1e-300


# ---------------------------------------------------------------- special functions

def _betacf(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = _TINY if abs(d) < _TINY else d
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = _TINY if abs(d) < _TINY else d
        c = 1.0 + aa / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = _TINY if abs(d) < _TINY else d
        c = 1.0 + aa / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def gammainc_lower(a: float, x: float) -> float:
    """Regularised lower incomplete gamma P(a, x)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x <= 0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cf(a, x)


def gammainc_upper(a: float, x: float) -> float:
    """Regularised upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x <= 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cf(a, x)


def _gamma_series(a: float, x: float) -> float:
    ap, total = a, 1.0 / a
    term = total
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise ArithmeticError(f"incomplete gamma series did not converge (a={a}, x={x})")


def _gamma_cf(a: float, x: float) -> float:
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = _TINY if abs(d) < _TINY else d
        c = b + an / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h
    raise ArithmeticError(f"incomplete gamma fraction did not converge (a={a}, x={x})")


def t_sf_two_sided(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def chi2_sf(x: float, df: float) -> float:
    return gammainc_upper(df / 2.0, x / 2.0)


# ---------------------------------------------------------------- tests

def welch_t(a: Sequence[float], b: Sequence[float]) -> tuple[float, float, float]:
    """Welch's unequal-variance t-test: (t, Welch-Satterthwaite df, two-sided p).

    Uses the unbiased (n - 1) sample variances.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise ValueError("each group needs at least two observations")
    va, vb = a.var(ddof=1) / na, b.var(ddof=1) / nb
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0:
        if diff == 0:
            return 0.0, float(na + nb - 2), 1.0
        return math.copysign(math.inf, diff), float(na + nb - 2), 0.0
    t = diff / math.sqrt(se2)
    # Welch-Satterthwaite in variance fractions (sum to 1), so tiny or huge variances cannot under/overflow
    fa, fb = va / se2, vb / se2
    df = 1.0 / (fa * fa / (na - 1) + fb * fb / (nb - 1))
    return float(t), float(df), t_sf_two_sided(t, df)


def midranks(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """1-based mid-ranks and the sizes of the tie groups."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(values.size, dtype=np.float64)
    ties = []
    i, n = 0, values.size
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        ties.append(j - i + 1)
        i = j + 1
    return ranks, np.asarray(ties, dtype=np.float64)


def kruskal_wallis(groups: Sequence[Sequence[float]]) -> tuple[float, int, float]:
    """Kruskal-Wallis H with tie correction: (H, df, p)."""
    groups = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(groups) < 2 or any(g.size == 0 for g in groups):
        raise ValueError("need at least two non-empty groups")
    values = np.concatenate(groups)
    n = values.size
    if n < 3:
        raise ValueError("need at least three observations in total")
    df = len(groups) - 1
    ranks, ties = midranks(values)
    correction = 1.0 - float(np.sum(ties ** 3 - ties)) / (n ** 3 - n)
    if correction <= 0:
        return 0.0, df, 1.0
    h, start = 0.0, 0
    for g in groups:
        r = ranks[start:start + g.size]
        h += r.sum() ** 2 / g.size
        start += g.size
    h = 12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)
    h /= correction
    h = max(h, 0.0)
    return float(h), df, chi2_sf(h, df)


# ---------------------------------------------------------------- gap records

def stratify(gap: float) -> str:
    """Band of a gap; the central band [-7, 7] is closed, outer bands half-open."""
    if not math.isfinite(gap):
        raise ValueError("gap must be finite")
    if gap < -21:
        return "LT_m21"
    if gap < -7:
        return "m21_m7"
    if gap <= 7:
        return "m7_7"
    if gap <= 21:
        return "7_21"
    return "GT_21"


@dataclass
class GapRecord:
    record_id: str
    ai_age: float
    actual_age: float
    outcomes: object = None
    maternal: object = None
    gap: float = field(init=False)
    band: str = field(init=False)

    def __post_init__(self):
        self.gap = float(self.ai_age) - float(self.actual_age)
        self.band = stratify(self.gap)

    @property
    def high_risk(self) -> bool:
        return self.band in HIGH_RISK

    def flag(self, label: str) -> bool:
        src = self.outcomes if label in OUTCOME_LABELS else self.maternal
        return bool(getattr(src, label))


def gap_records(predictions: dict, records) -> list:
    """Join ``record_id -> ai_age`` with cohort records."""
    out = []
    for r in records:
        if r.record_id in predictions:
            out.append(GapRecord(r.record_id, predictions[r.record_id], r.actual_age_days,
                                 r.outcomes, r.maternal))
    return out


@dataclass
class TestResult:
    name: str
    statistic: Optional[float]
    df: Optional[float]
    p: Optional[float]


@dataclass
class GapTable:
    labels: tuple
    band_n: dict
    counts: dict       # label -> band -> count
    t_tests: dict      # label -> TestResult (high-risk vs central)
    h_tests: dict      # label -> TestResult (omnibus over non-empty bands)
    pairwise: dict     # label -> list of TestResult

    def percent(self, label: str, band: str) -> Optional[float]:
        n = self.band_n[band]
        return None if n == 0 else 100.0 * self.counts[label][band] / n

    def total(self) -> int:
        return sum(self.band_n.values())


def _safe_welch(a, b, name) -> TestResult:
    if len(a) < 2 or len(b) < 2:
        return TestResult(name, None, None, None)
    t, df, p = welch_t(a, b)
    return TestResult(name, t, df, p)


def incidence_table(gaps: Sequence[GapRecord], labels: Sequence[str] = OUTCOME_LABELS) -> GapTable:
    if not gaps:
        raise ValueError("no gap records")
    band_n = {b: 0 for b in BANDS}
    for g in gaps:
        band_n[g.band] += 1
    counts, t_tests, h_tests, pairwise = {}, {}, {}, {}
    for label in labels:
        ind = {b: [] for b in BANDS}
        for g in gaps:
            ind[g.band].append(1.0 if g.flag(label) else 0.0)
        counts[label] = {b: int(sum(ind[b])) for b in BANDS}
        high = ind["LT_m21"] + ind["GT_21"]
        t_tests[label] = _safe_welch(high, ind[CENTRAL], "high_risk_vs_m7_7")
        pairwise[label] = [_safe_welch(ind[a], ind[b], f"{a}_vs_{b}") for a, b in PAIRWISE]
        groups = [ind[b] for b in BANDS if ind[b]]
        if len(groups) >= 2 and sum(len(g) for g in groups) >= 3:
            h, df, p = kruskal_wallis(groups)
            h_tests[label] = TestResult("kruskal_wallis", h, df, p)
        else:
            h_tests[label] = TestResult("kruskal_wallis", None, None, None)
    return GapTable(tuple(labels), band_n, counts, t_tests, h_tests, pairwise)


def _fmt_p(p: Optional[float]) -> str:
    return "" if p is None else f"{p:.6g}"


def write_gap_table(table: GapTable, path) -> None:
    """Outcome rows x band columns ``count (pct)`` plus T-test and H-test p-values."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["outcome"] + [f"{b} (n={table.band_n[b]})" for b in BANDS]
                   + ["t_test_p", "h_test_p"])
        for label in table.labels:
            cells = []
            for b in BANDS:
                pct = table.percent(label, b)
                cells.append(f"{table.counts[label][b]} ({'' if pct is None else f'{pct:.2f}'})")
            w.writerow([label] + cells + [_fmt_p(table.t_tests[label].p), _fmt_p(table.h_tests[label].p)])


def write_tests(table: GapTable, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["outcome", "test", "statistic", "df", "p"])
        for label in table.labels:
            for res in [table.t_tests[label], *table.pairwise[label], table.h_tests[label]]:
                w.writerow([label, res.name, "" if res.statistic is None else f"{res.statistic:.6g}",
                            "" if res.df is None else f"{res.df:.6g}", _fmt_p(res.p)])


# ---------------------------------------------------------------- curves and heat maps

@dataclass
class RiskBin:
    center: float
    n: int
    incidence: Optional[float]
    smoothed: Optional[float]
    low_support: bool


def risk_curve(gaps, outcome, bin_width: float = 7.0, window: int = 3,
               min_support: int = 20) -> list:
    """Incidence per gap bin (bins aligned on multiples of ``bin_width``) plus a centred moving average.

    The moving average weights each neighbouring bin equally and skips
    empty bins.
    """
    gaps = np.asarray(gaps, dtype=np.float64)
    outcome = np.asarray(outcome, dtype=bool)
    if gaps.size == 0:
        raise ValueError("no gaps")
    idx = np.floor(gaps / bin_width).astype(int)
    lo, hi = idx.min(), idx.max()
    bins = []
    for k in range(lo, hi + 1):
        sel = idx == k
        n = int(sel.sum())
        inc = float(outcome[sel].mean()) if n else None
        bins.append(RiskBin((k + 0.5) * bin_width, n, inc, None, n < min_support))
    half = window // 2
    for i, b in enumerate(bins):
        vals = [bins[j].incidence for j in range(max(0, i - half), min(len(bins), i + half + 1))
                if bins[j].incidence is not None]
        b.smoothed = float(np.mean(vals)) if vals else None
    return bins


def write_risk_curve(bins, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_center", "n", "incidence", "smoothed", "low_support"])
        for b in bins:
            w.writerow([f"{b.center:g}", b.n, "" if b.incidence is None else f"{b.incidence:.6g}",
                        "" if b.smoothed is None else f"{b.smoothed:.6g}", int(b.low_support)])


@dataclass
class Heatmap:
    gap_edges: np.ndarray
    weeks: np.ndarray
    counts: np.ndarray        # [n_weeks, n_gap_bins]
    events: np.ndarray

    @property
    def incidence(self) -> np.ndarray:
        """Event rate per cell; NaN marks cells without support."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.events / np.maximum(self.counts, 1), np.nan)


def heatmap_bins(gaps, actual_ages, outcome, gap_edges=None, weeks=None) -> Heatmap:
    """2-D histogram over gestational week (floor(days / 7)) x gap bin."""
    gaps = np.asarray(gaps, dtype=np.float64)
    ages = np.asarray(actual_ages, dtype=np.float64)
    outcome = np.asarray(outcome, dtype=bool)
    if gaps.size == 0:
        raise ValueError("no records")
    if gap_edges is None:
        gap_edges = np.array([-np.inf, -21, -7, 7, 21, np.inf])
    gap_edges = np.asarray(gap_edges, dtype=np.float64)
    wk = np.floor(ages / 7.0).astype(int)
    if weeks is None:
        weeks = np.arange(wk.min(), wk.max() + 1)
    weeks = np.asarray(weeks, dtype=int)
    gi = np.clip(np.searchsorted(gap_edges, gaps, side="right") - 1, 0, len(gap_edges) - 2)
    counts = np.zeros((weeks.size, len(gap_edges) - 1), dtype=int)
    events = np.zeros_like(counts)
    row_of = {w: i for i, w in enumerate(weeks)}
    for w, g, o in zip(wk, gi, outcome):
        r = row_of.get(int(w))
        if r is None:
            continue
        counts[r, g] += 1
        events[r, g] += int(o)
    return Heatmap(gap_edges, weeks, counts, events)


def write_heatmap(hm: Heatmap, path) -> None:
    inc = hm.incidence
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["week", "gap_lo", "gap_hi", "count", "events", "incidence"])
        for i, wk in enumerate(hm.weeks):
            for j in range(hm.counts.shape[1]):
                w.writerow([int(wk), f"{hm.gap_edges[j]:g}", f"{hm.gap_edges[j + 1]:g}",
                            int(hm.counts[i, j]), int(hm.events[i, j]),
                            "" if np.isnan(inc[i, j]) else f"{inc[i, j]:.6g}"])


__all__ = [
    "BANDS", "CENTRAL", "HIGH_RISK", "MATERNAL_LABELS", "OUTCOME_LABELS", "GapRecord", "GapTable",
    "betainc", "chi2_sf", "gammainc_lower", "gammainc_upper", "gap_records", "heatmap_bins",
    "incidence_table", "kruskal_wallis", "risk_curve", "stratify", "t_sf_two_sided", "welch_t",
]
