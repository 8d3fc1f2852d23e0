"""Cohort container invariants and record round-trips."""

import numpy as np
import pytest

from rcds import Cohort, ConfigError
from rcds.cohort import SubjectRecord, TimeRow, baseline_design

from conftest import FIXTURE_K, FIXTURE_SCHEMA, make_fixture_records


def test_from_records_roundtrip(fixture_cohort, fixture_records):
    got = fixture_cohort.records()
    for a, b in zip(got, fixture_records):
        assert a.subject_id == b.subject_id
        assert a.followup_end == b.followup_end
        assert a.end_reason == b.end_reason
        assert a.d_total == b.d_total
        assert (np.isnan(a.outcome_y) and np.isnan(b.outcome_y)) or \
            a.outcome_y == b.outcome_y
        assert len(a.rows) == len(b.rows)
        for ra, rb in zip(a.rows, b.rows):
            assert ra.t == rb.t and ra.monitor == rb.monitor
            assert ra.months_since_last_monitor == rb.months_since_last_monitor
            assert ra.override_flag == rb.override_flag


def test_d_total_recount_enforced(fixture_records):
    bad = make_fixture_records()
    bad[0].d_total = 4
    with pytest.raises(ConfigError, match="d_total"):
        Cohort.from_records(bad, FIXTURE_SCHEMA, FIXTURE_K)


def test_outcome_requires_full_followup(fixture_records):
    bad = make_fixture_records()
    bad[2].outcome_y = 1.0  # s3 left at month 11
    with pytest.raises(ConfigError, match="left early"):
        Cohort.from_records(bad, FIXTURE_SCHEMA, FIXTURE_K)


def test_months_since_recurrence_enforced():
    rows = [
        TimeRow(0, 1, 300.0, 300.0, 0, 0),
        TimeRow(1, 0, float("nan"), 300.0, 2, 0),  # should be 1
    ]
    rec = SubjectRecord("bad", {"sex": 0.0, "age": 30.0}, rows, float("nan"),
                        1, 1, "lost", FIXTURE_K)
    with pytest.raises(ConfigError, match="reset/increment"):
        Cohort.from_records([rec], FIXTURE_SCHEMA, FIXTURE_K)


def test_carried_marker_enforced():
    rows = [
        TimeRow(0, 1, 300.0, 300.0, 0, 0),
        TimeRow(1, 0, float("nan"), 290.0, 1, 0),  # carry must stay 300
    ]
    rec = SubjectRecord("bad", {"sex": 0.0, "age": 30.0}, rows, float("nan"),
                        1, 1, "lost", FIXTURE_K)
    with pytest.raises(ConfigError, match="carry"):
        Cohort.from_records([rec], FIXTURE_SCHEMA, FIXTURE_K)


def test_baseline_month_must_be_monitored():
    rows = [TimeRow(0, 0, float("nan"), float("nan"), 0, 0)]
    rec = SubjectRecord("bad", {"sex": 0.0, "age": 30.0}, rows, float("nan"),
                        0, 0, "lost", FIXTURE_K)
    with pytest.raises(ConfigError, match="baseline month"):
        Cohort.from_records([rec], FIXTURE_SCHEMA, FIXTURE_K)


def test_prev_state_alignment(fixture_cohort):
    prev_last, prev_ovr, gap = fixture_cohort.prev_state()
    # s3: decision at month 8 is governed by month 7's state: marker 400,
    # no override, gap 8
    i3 = fixture_cohort.offsets[2]
    assert prev_last[i3 + 8] == 400.0
    assert prev_ovr[i3 + 8] == 0
    assert gap[i3 + 8] == 8
    # and month 9's decision sees the override raised at month 8
    assert prev_ovr[i3 + 9] == 1
    assert prev_last[i3 + 9] == 180.0


def test_baseline_design_layout(fixture_cohort):
    X, names = baseline_design(fixture_cohort, "all")
    assert names == ["sex=male", "age"]
    assert np.array_equal(X[:, 0], [0.0, 1.0, 0.0])
    assert np.array_equal(X[:, 1], [41.0, 36.5, 52.0])
    X2, names2 = baseline_design(fixture_cohort, ["age"])
    assert names2 == ["age"]
    with pytest.raises(ConfigError):
        baseline_design(fixture_cohort, ["nope"])
