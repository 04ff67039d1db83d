import csv
import math
from statistics import NormalDist

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from oracle_points import BETAINC, GAMMAINC, KRUSKAL, WELCH

from ctgage.data import OUTCOME_LABELS, OutcomeFlags
from ctgage.stats import (BANDS, GapRecord, betainc, chi2_sf, gammainc_lower, gammainc_upper,
                          heatmap_bins, incidence_table, kruskal_wallis, midranks, risk_curve, stratify,
                          t_sf_two_sided, welch_t, write_gap_table, write_tests)
from ctgage.synth import SynthSpec, generate_cohort

values = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=30)


# ---------------------------------------------------------------- special functions

@pytest.mark.parametrize("a,b,x,expected", BETAINC)
def test_betainc_oracle(a, b, x, expected):
    assert abs(betainc(a, b, x) - expected) < 1e-8


@pytest.mark.parametrize("a,x,lower,upper", GAMMAINC)
def test_gammainc_oracle(a, x, lower, upper):
    assert abs(gammainc_lower(a, x) - lower) < 1e-8
    assert abs(gammainc_upper(a, x) - upper) < 1e-8


def test_special_function_edges():
    assert betainc(2.0, 3.0, 0.0) == 0.0 and betainc(2.0, 3.0, 1.0) == 1.0
    assert gammainc_lower(2.0, 0.0) == 0.0 and gammainc_upper(2.0, 0.0) == 1.0
    assert t_sf_two_sided(0.0, 5.0) == 1.0
    assert chi2_sf(0.0, 2) == 1.0
    # chi-square with 2 df has a closed-form survival function
    assert abs(chi2_sf(3.0, 2) - math.exp(-1.5)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 50), st.floats(0.1, 50), st.floats(0.0, 1.0))
def test_betainc_symmetry(a, b, x):
    y = 1.0 - x
    x = 1.0 - y                 # snap so x + y == 1 exactly in floating point
    assert abs(betainc(a, b, x) + betainc(b, a, y) - 1) < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 100), st.floats(0.0, 200))
def test_gamma_halves_sum_to_one(a, x):
    assert abs(gammainc_lower(a, x) + gammainc_upper(a, x) - 1) < 1e-9


# ---------------------------------------------------------------- welch and kruskal-wallis

@pytest.mark.parametrize("a,b,t,df,p", WELCH)
def test_welch_reference(a, b, t, df, p):
    got = welch_t(a, b)
    assert abs(got[0] - t) < 1e-10 and abs(got[1] - df) < 1e-9 and abs(got[2] - p) < 1e-10


def test_welch_identical_groups():
    assert welch_t([1, 2, 3], [1, 2, 3]) == (0.0, 4.0, 1.0)
    assert welch_t([2, 2], [2, 2, 2])[::2] == (0.0, 1.0)


def test_welch_scale_invariance():
    a, b = [1, 2, 3, 4], [2, 3, 4, 5]
    t1, _, p1 = welch_t(a, b)
    t2, _, p2 = welch_t([2 * v for v in a], [2 * v for v in b])
    assert math.isclose(t1, t2, rel_tol=1e-12) and math.isclose(p1, p2, rel_tol=1e-12)


def test_welch_needs_two_per_group():
    with pytest.raises(ValueError):
        welch_t([1.0], [1.0, 2.0])


@pytest.mark.parametrize("groups,h,p", KRUSKAL)
def test_kruskal_reference(groups, h, p):
    got = kruskal_wallis(groups)
    assert abs(got[0] - h) < 1e-12 and got[1] == len(groups) - 1 and abs(got[2] - p) < 1e-10


def test_kruskal_degenerate():
    assert kruskal_wallis([(1, 2, 3), (1, 2, 3)]) == (0.0, 1, 1.0)
    assert kruskal_wallis([(1, 1, 1), (1, 1, 1)]) == (0.0, 1, 1.0)
    with pytest.raises(ValueError):
        kruskal_wallis([(1, 2)])
    with pytest.raises(ValueError):
        kruskal_wallis([(1,), (2,)])


def test_midranks_ties():
    ranks, ties = midranks(np.array([3.0, 1.0, 3.0, 2.0]))
    np.testing.assert_array_equal(ranks, [3.5, 1.0, 3.5, 2.0])
    assert sorted(ties) == [1, 1, 2]


def test_welch_tiny_variance_df_finite():
    # squaring a ~1e-217 variance underflows; df must still come out as the one-group limit
    t, df, p = welch_t([0.0, 0.0], [0.0, 8.160471669756601e-109])
    assert t == pytest.approx(-1.0) and df == pytest.approx(1.0) and p == pytest.approx(0.5)


@settings(max_examples=80, deadline=None)
@given(values, values, st.randoms(use_true_random=False))
def test_welch_permutation_invariant_and_p_in_range(a, b, rnd):
    t, df, p = welch_t(a, b)
    a2, b2 = list(a), list(b)
    rnd.shuffle(a2)
    rnd.shuffle(b2)
    t2, df2, p2 = welch_t(a2, b2)
    if math.isfinite(t):
        assert math.isclose(t, t2, rel_tol=1e-9, abs_tol=1e-9)
        assert math.isclose(p, p2, rel_tol=1e-9, abs_tol=1e-12)
    assert 0 <= p <= 1
    if math.isfinite(t):
        assert p > 0 or abs(t) > 30


@settings(max_examples=80, deadline=None)
@given(st.lists(st.lists(st.integers(0, 20), min_size=1, max_size=12), min_size=2, max_size=5),
       st.randoms(use_true_random=False))
def test_kruskal_permutation_invariant(groups, rnd):
    assume(sum(map(len, groups)) >= 3)
    h, df, p = kruskal_wallis(groups)
    shuffled = [rnd.sample(g, len(g)) for g in groups]
    h2, _, p2 = kruskal_wallis(shuffled)
    assert math.isclose(h, h2, rel_tol=1e-9, abs_tol=1e-12)
    assert 0 < p <= 1 and df == len(groups) - 1 and h >= 0
    # reordering whole groups does not change the statistic either
    h3, _, _ = kruskal_wallis(groups[::-1])
    assert math.isclose(h, h3, rel_tol=1e-9, abs_tol=1e-12)


# ---------------------------------------------------------------- stratification and tables

@pytest.mark.parametrize("gap,band", [(-34.30, "LT_m21"), (0.0, "m7_7"), (31.58, "GT_21"),
                                      (-21.0, "m21_m7"), (-21.0001, "LT_m21"), (-7.0, "m7_7"),
                                      (-7.0001, "m21_m7"), (7.0, "m7_7"), (7.0001, "7_21"),
                                      (21.0, "7_21"), (21.0001, "GT_21")])
def test_stratify_examples(gap, band):
    assert stratify(gap) == band


def test_stratify_rejects_non_finite():
    with pytest.raises(ValueError):
        stratify(float("nan"))


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_bands_partition_and_are_ordered(g1, g2):
    b1, b2 = stratify(g1), stratify(g2)
    assert b1 in BANDS
    if g1 <= g2:
        assert BANDS.index(b1) <= BANDS.index(b2)


def _gap(rid, gap, premature=False):
    return GapRecord(rid, 250.0 + gap, 250.0, OutcomeFlags(premature=premature))


def test_percent_examples():
    gaps = [_gap(f"a{i}", 30.0, i < 123) for i in range(2308)]
    gaps += [_gap(f"b{i}", 0.0, i < 187) for i in range(13152)]
    table = incidence_table(gaps)
    assert f"{table.percent('premature', 'GT_21'):.2f}" == "5.33"
    assert f"{table.percent('premature', 'm7_7'):.2f}" == "1.42"
    assert table.percent("premature", "LT_m21") is None
    assert table.total() == 2308 + 13152
    t = table.t_tests["premature"]
    assert t.name == "high_risk_vs_m7_7" and t.statistic > 0 and t.p < 1e-6


def test_all_false_flags_give_zero_counts():
    gaps = [_gap(f"r{i}", g) for i, g in enumerate([-30, -10, 0, 10, 30, 0])]
    table = incidence_table(gaps)
    for label in OUTCOME_LABELS:
        assert all(table.counts[label][b] == 0 for b in BANDS)
        assert table.h_tests[label].p == 1.0


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        incidence_table([])


def test_high_risk_flag():
    assert _gap("a", -22).high_risk and _gap("b", 22).high_risk and not _gap("c", 21).high_risk


def test_table_csv_layout(tmp_path):
    gaps = [_gap(f"r{i}", g, i % 3 == 0) for i, g in enumerate(np.linspace(-40, 40, 60))]
    table = incidence_table(gaps)
    write_gap_table(table, tmp_path / "t.csv")
    rows = list(csv.reader((tmp_path / "t.csv").open()))
    assert len(rows) == 1 + 6 and [r[0] for r in rows[1:]] == list(OUTCOME_LABELS)
    assert all(len(r) == 1 + 5 + 2 for r in rows)
    assert rows[0][-2:] == ["t_test_p", "h_test_p"]
    write_tests(table, tmp_path / "tests.csv")
    tests = list(csv.DictReader((tmp_path / "tests.csv").open()))
    # one high-risk test, three pairwise tests and the omnibus test per outcome
    assert len(tests) == 6 * 5


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-60, 60), st.booleans()), min_size=1, max_size=80))
def test_table_percentages(pairs):
    gaps = [_gap(f"r{i}", g, f) for i, (g, f) in enumerate(pairs)]
    table = incidence_table(gaps)
    assert table.total() == len(gaps)
    for b in BANDS:
        pct = table.percent("premature", b)
        if table.band_n[b] == 0:
            assert pct is None
        else:
            assert 0 <= pct <= 100
            assert pct == 100.0 * table.counts["premature"][b] / table.band_n[b]
    for res in [table.t_tests["premature"], table.h_tests["premature"]]:
        if res.p is not None:
            # p = 0 only for perfectly separated zero-variance groups, where t is infinite
            assert 0 < res.p <= 1 or math.isinf(res.statistic)


# ---------------------------------------------------------------- risk curves

def test_risk_curve_rises_with_planted_risk():
    rng = np.random.default_rng(0)
    gaps = rng.uniform(-49, 49, 200_000)
    flags = rng.random(gaps.size) < 0.005 * np.abs(gaps)
    bins = [b for b in risk_curve(gaps, flags) if not b.low_support]
    for side in (1, -1):
        seq = sorted((b for b in bins if side * b.center > 0), key=lambda b: abs(b.center))
        smoothed = [b.smoothed for b in seq]
        assert all(x <= y for x, y in zip(smoothed, smoothed[1:])), smoothed


def test_risk_curve_flat_under_null():
    rng = np.random.default_rng(1)
    gaps = rng.normal(0, 15, 50_000)
    flags = rng.random(gaps.size) < 0.1
    bins = [b for b in risk_curve(gaps, flags) if not b.low_support]
    # simultaneous 95% binomial bands over the supported bins
    z = NormalDist().inv_cdf(1 - 0.025 / len(bins))
    for b in bins:
        assert abs(b.incidence - 0.1) <= z * math.sqrt(0.1 * 0.9 / b.n), b


def test_risk_curve_empty_outcome_and_bins():
    bins = risk_curve([-10.0, 0.5, 3.0, 30.0], [False] * 4)
    assert [b.center for b in bins] == [-10.5, -3.5, 3.5, 10.5, 17.5, 24.5, 31.5]
    assert [b.n for b in bins] == [1, 0, 2, 0, 0, 0, 1]
    assert all(b.incidence in (0.0, None) for b in bins)
    assert [b.smoothed for b in bins] == [0.0, 0.0, 0.0, 0.0, None, 0.0, 0.0]
    assert all(b.low_support for b in bins)
    with pytest.raises(ValueError):
        risk_curve([], [])


def test_smoothing_is_centred_average():
    gaps = np.repeat([0.5, 7.5, 14.5], 30)
    flags = np.concatenate([np.zeros(30), np.ones(30), np.r_[np.ones(15), np.zeros(15)]]).astype(bool)
    bins = risk_curve(gaps, flags)
    assert [b.incidence for b in bins] == [0.0, 1.0, 0.5]
    assert [b.smoothed for b in bins] == [0.5, 0.5, 0.75]


# ---------------------------------------------------------------- heat maps

def test_single_record_single_cell():
    hm = heatmap_bins([30.0], [252.0], [True])
    assert hm.counts.sum() == 1 and np.count_nonzero(hm.counts) == 1
    assert hm.weeks.tolist() == [36] and hm.counts[0, 4] == 1
    inc = hm.incidence
    assert inc[0, 4] == 1.0 and np.isnan(inc[0, :4]).all()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-60, 60), st.integers(210, 294), st.booleans()), min_size=1, max_size=60))
def test_heatmap_conservation(rows):
    gaps, ages, flags = zip(*rows)
    hm = heatmap_bins(gaps, ages, flags)
    assert hm.counts.sum() == len(rows) and hm.events.sum() == sum(flags)
    assert np.all(hm.events <= hm.counts)


def test_heatmap_finds_planted_weeks():
    spec = SynthSpec(n_subjects=3000, sessions_per_subject=(1, 1), n_samples=4, seed=12,
                     disease_prevalence={}, planted_gap_days={},
                     outcome_logit={"premature": (-4.0, 0.0)},
                     outcome_age_boost={"premature": (35, 36, 4.0)})
    cohort, _ = generate_cohort(spec)
    ages = [r.actual_age_days for r in cohort.records]
    flags = [r.outcomes.premature for r in cohort.records]
    hm = heatmap_bins(np.zeros(len(ages)), ages, flags)
    central = hm.incidence[:, 2]
    assert hm.weeks[np.nanargmax(central)] in (35, 36)
