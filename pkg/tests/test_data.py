import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctgage.data import (CLINICAL, TEST, TRAIN, VAL, Cohort, CtgRecord, MaternalFlags, OutcomeFlags,
                         SizingError, load_cohort, parse_record, read_splits, record_to_json, screen, split_cohort,
                         write_cohort, write_splits)


def line(rid, fhr, age=250, subject=None, **extra):
    obj = {"record_id": rid, "subject_id": subject or rid, "fhr": fhr, "actual_age_days": age}
    obj.update(extra)
    return json.dumps(obj)


def rec(rid, n=1800, age=250, subject=None, outcomes=None, maternal=None):
    return CtgRecord(rid, subject or rid, np.full(n, 140.0), age,
                     outcomes or OutcomeFlags(), maternal or MaternalFlags())


def test_three_valid_lines(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text("\n".join(line(f"r{i}", [140, 141, 142]) for i in range(3)) + "\n")
    c = load_cohort(p)
    assert len(c) == 3 and c.report.rejected == 0 and c.report.loaded == 3


def test_out_of_range_value_is_clamped_and_counted(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text(line("a", [140, 300, 141]) + "\n")
    c = load_cohort(p)
    assert c.records[0].fhr[1] == 250.0
    assert c.report.clamped == 1


def test_low_values_clamp_to_floor(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text(line("a", [10, 140]) + "\n")
    c = load_cohort(p)
    assert c.records[0].fhr[0] == 30.0 and c.report.clamped == 1


def test_empty_file(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text("")
    assert len(load_cohort(p)) == 0


def test_malformed_lines_are_skipped_and_counted(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text("\n".join([line("a", [140]), "{not json", line("b", []), line("c", [140], age=-3),
                            line("a", [150]), json.dumps([1, 2]), line("d", [140], age=250.5)]) + "\n")
    c = load_cohort(p)
    assert [r.record_id for r in c.records] == ["a"]
    assert c.report.rejected == 6
    assert c.report.rejected_lines == [2, 3, 4, 5, 6, 7]


def test_missing_file_raises(tmp_path):
    with pytest.raises(OSError):
        load_cohort(tmp_path / "nope.jsonl")


def test_flags_and_ua_round_trip(tmp_path):
    r = CtgRecord("x", "s", np.array([140.5, 141.25]), 260, OutcomeFlags(premature=True),
                  MaternalFlags(gdm=True), ua=np.array([0.0, 12.5]))
    p = tmp_path / "c.jsonl"
    write_cohort([r], p)
    back = load_cohort(p).records[0]
    assert back.outcomes.premature and back.maternal.gdm and not back.normal
    np.testing.assert_array_equal(back.fhr, r.fhr)
    np.testing.assert_array_equal(back.ua, r.ua)
    assert record_to_json(back) == record_to_json(r)


def test_unknown_flag_rejected(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text(line("a", [140], outcomes={"nonsense": True}) + "\n")
    assert load_cohort(p).report.rejected == 1


@pytest.mark.parametrize("n,age,expected", [(1800, 280, True), (1799, 280, False), (3600, 295, False),
                                            (3600, 294, True)])
def test_screen(n, age, expected):
    assert screen(rec("a", n=n, age=age)) is expected


def test_record_validation():
    with pytest.raises(ValueError):
        CtgRecord("a", "a", np.array([np.nan]), 250)
    with pytest.raises(ValueError):
        CtgRecord("a", "a", np.array([140.0]), 0)
    with pytest.raises(ValueError):
        CtgRecord("a", "a", np.array([140.0, 141.0]), 250, ua=np.array([1.0]))


def test_duplicate_ids_rejected():
    with pytest.raises(ValueError):
        Cohort([rec("a"), rec("a")])


def test_hundred_subjects_split_80_10_10():
    c = Cohort([rec(f"s{i}") for i in range(100)])
    a, b = split_cohort(c, 7), split_cohort(c, 7)
    assert a.split_of == b.split_of
    counts = {k: len(a.in_split(k)) for k in (TRAIN, VAL, TEST)}
    assert counts == {TRAIN: 80, VAL: 10, TEST: 10}


def test_subject_records_share_a_split():
    records = [rec(f"s{i}-{j}", subject=f"s{i}") for i in range(30) for j in range(3)]
    c = split_cohort(Cohort(records), 1)
    by_subject = {}
    for r in records:
        by_subject.setdefault(r.subject_id, set()).add(c.split_of[r.record_id])
    assert all(len(v) == 1 for v in by_subject.values())


def test_flagged_records_go_to_clinical_eval():
    normal = [rec(f"n{i}") for i in range(40)]
    flagged = [rec(f"f{i}", outcomes=OutcomeFlags(premature=True)) for i in range(5)]
    c = split_cohort(Cohort(normal + flagged), 3)
    clinical = {r.record_id for r in c.in_split(CLINICAL)}
    test = {r.record_id for r in c.in_split(TEST)}
    assert clinical == {f"f{i}" for i in range(5)} | test
    for split in (TRAIN, VAL, TEST):
        assert all(r.normal for r in c.in_split(split))


def test_too_few_normal_subjects():
    with pytest.raises(SizingError):
        split_cohort(Cohort([rec(f"s{i}") for i in range(9)]), 0)


def test_splits_csv_round_trip(tmp_path):
    c = split_cohort(Cohort([rec(f"s{i}") for i in range(20)] + [rec("f", maternal=MaternalFlags(gdm=True))]), 0)
    write_splits(c, tmp_path / "s.csv")
    assert read_splits(tmp_path / "s.csv") == c.split_of


@settings(max_examples=40, deadline=None)
@given(n_subjects=st.integers(10, 80), records_per=st.integers(1, 3), n_flagged=st.integers(0, 5),
       seed=st.integers(0, 1000))
def test_split_invariants(n_subjects, records_per, n_flagged, seed):
    records = [rec(f"s{i}-{j}", subject=f"s{i}") for i in range(n_subjects) for j in range(records_per)]
    records += [rec(f"f{i}", maternal=MaternalFlags(placental_lesion=True)) for i in range(n_flagged)]
    c = split_cohort(Cohort(records), seed)
    assert set(c.split_of) == {r.record_id for r in records}
    train, val, test = ({r.subject_id for r in c.in_split(k)} for k in (TRAIN, VAL, TEST))
    assert not (train & val or train & test or val & test)
    assert len(train) + len(val) + len(test) == n_subjects
    assert val and test and train
    for r in records:
        marks = c.split_of[r.record_id]
        assert (TEST in marks) <= (CLINICAL in marks)
        assert (not r.normal) <= (marks == (CLINICAL,))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50))
def test_clamp_bounds(values):
    r, n_clamped = parse_record(line("a", values))
    assert n_clamped == sum(1 for v in values if v < 30 or v > 250)
    assert np.all(r.fhr >= 30) and np.all(r.fhr <= 250)
