"""Strategy windows and consistency-horizon semantics."""

import numpy as np
import pytest

from rcds import (
    Cohort,
    ConfigError,
    StrategyGrid,
    ThresholdStrategy,
    UndefinedHistory,
    applicable_window,
    consistency_horizon,
    horizon_matrix,
)
from rcds.cohort import TimeRow

from conftest import FIXTURE_K, FIXTURE_SCHEMA, fixture_horizons, make_fixture_records


def row(t=5, monitor=0, last=300.0, since=3, override=0):
    return TimeRow(t=t, monitor=monitor, observed_marker=float("nan"),
                   last_observed_marker=last, months_since_last_monitor=since,
                   override_flag=override)


class TestApplicableWindow:
    def test_below_threshold(self):
        s = ThresholdStrategy(320.0, (2, 7), (8, 13), (2, 7))
        assert applicable_window(s, row(last=250.0)) == (2, 7)

    def test_boundary_is_above(self):
        s = ThresholdStrategy(320.0, (2, 7), (8, 13), (2, 7))
        assert applicable_window(s, row(last=320.0)) == (8, 13)

    def test_override_takes_precedence(self):
        s = ThresholdStrategy(320.0, (2, 7), (8, 13), (2, 7))
        assert applicable_window(s, row(last=600.0, override=1)) == (2, 7)

    def test_missing_history_raises(self):
        s = ThresholdStrategy(320.0)
        with pytest.raises(UndefinedHistory):
            applicable_window(s, row(last=float("nan")))
        # an active override still defines the window
        assert applicable_window(s, row(last=float("nan"), override=1)) == (2, 7)

    def test_window_validation(self):
        with pytest.raises(ConfigError):
            ThresholdStrategy(320.0, window_below=(0, 7))
        with pytest.raises(ConfigError):
            ThresholdStrategy(320.0, window_below=(5, 3))
        with pytest.raises(ConfigError):
            ThresholdStrategy(320.0, window_below=(2, 14), window_above=(8, 13))


class TestConsistencyHorizon:
    def test_regular_three_month_schedule_is_consistent(self, fixture_records):
        s1 = fixture_records[0]
        for x in (200.0, 320.0, 500.0):
            strat = ThresholdStrategy(x, (2, 7), (8, 13), (2, 7))
            assert consistency_horizon(strat, s1) == FIXTURE_K + 1

    def test_nine_month_gap_deviates_when_gap_reaches_eight(self, fixture_records):
        s2 = fixture_records[1]
        strat = ThresholdStrategy(320.0, (2, 7), (8, 13), (2, 7))
        assert consistency_horizon(strat, s2) == 8

    def test_premature_visit_deviates_at_second_visit(self, fixture_records):
        s2 = fixture_records[1]
        # for x <= 240 the subject sits above threshold; the month-11 visit
        # comes at gap 2 < 8
        strat = ThresholdStrategy(240.0, (2, 7), (8, 13), (2, 7))
        assert consistency_horizon(strat, s2) == 11

    def test_hand_traced_fixture_all_strategies(self, fixture_records):
        for x in np.arange(200.0, 501.0, 10.0):
            strat = ThresholdStrategy(x, (2, 7), (8, 13), (2, 7))
            want = fixture_horizons(x)
            for rec in fixture_records:
                assert consistency_horizon(strat, rec) == want[rec.subject_id], \
                    f"x={x}, subject={rec.subject_id}"

    def test_entry_gap_beyond_window_deviates_at_zero(self):
        rows = [TimeRow(t=0, monitor=0, observed_marker=float("nan"),
                        last_observed_marker=250.0,
                        months_since_last_monitor=9, override_flag=0)]
        from rcds import SubjectRecord
        rec = SubjectRecord(subject_id="z", baseline={}, rows=rows,
                            outcome_y=float("nan"), d_total=0, followup_end=0,
                            end_reason="lost", horizon=12)
        strat = ThresholdStrategy(320.0, (2, 7), (8, 13), (2, 7))
        assert consistency_horizon(strat, rec) == 0

    def test_prefix_property(self, fixture_records):
        # appending rows after the deviation month never changes the horizon
        s2 = fixture_records[1]
        strat = ThresholdStrategy(320.0, (2, 7), (8, 13), (2, 7))
        full = consistency_horizon(strat, s2)
        from rcds import SubjectRecord
        for cut in range(full + 1, len(s2.rows) + 1):
            trimmed = SubjectRecord(
                subject_id="s2", baseline=s2.baseline, rows=s2.rows[:cut],
                outcome_y=float("nan"), d_total=sum(r.monitor for r in s2.rows[:cut]),
                followup_end=cut - 1, end_reason="lost", horizon=s2.horizon)
            assert consistency_horizon(strat, trimmed) == full

    def test_monotone_window_property(self, fixture_records):
        # strategies differing only in x agree whenever the marker path never
        # lands between the thresholds
        s1 = fixture_records[0]  # markers in [95, 110]
        a = ThresholdStrategy(330.0, (2, 7), (8, 13), (2, 7))
        b = ThresholdStrategy(470.0, (2, 7), (8, 13), (2, 7))
        assert consistency_horizon(a, s1) == consistency_horizon(b, s1)


class TestHorizonMatrix:
    def test_matches_record_level_on_fixture(self, fixture_cohort, fixture_records):
        grid = StrategyGrid.default()
        mat = horizon_matrix(fixture_cohort, grid)
        for i, rec in enumerate(fixture_records):
            for j, strat in enumerate(grid):
                assert mat[i, j] == consistency_horizon(strat, rec)

    def test_matches_record_level_on_simulated(self):
        from rcds import DgpParams, simulate_cohort

        cohort = simulate_cohort(DgpParams(), 150, seed=9)
        grid = StrategyGrid.default(x_step=50)
        mat = horizon_matrix(cohort, grid)
        for i in range(cohort.n_subjects):
            rec = cohort.record(i)
            for j, strat in enumerate(grid):
                assert mat[i, j] == consistency_horizon(strat, rec)


class TestStrategyGrid:
    def test_default_grid_is_31_strategies(self):
        grid = StrategyGrid.default()
        assert len(grid) == 31
        assert grid.xs[0] == 200.0 and grid.xs[-1] == 500.0
        assert np.all(np.diff(grid.xs) == 10.0)

    def test_nonincreasing_thresholds_rejected(self):
        with pytest.raises(ConfigError):
            StrategyGrid(strategies=(ThresholdStrategy(300.0),
                                     ThresholdStrategy(300.0)))

    def test_mixed_windows_rejected(self):
        with pytest.raises(ConfigError):
            StrategyGrid(strategies=(
                ThresholdStrategy(300.0, (2, 7), (8, 13), (2, 7)),
                ThresholdStrategy(310.0, (3, 6), (8, 13), (2, 7)),
            ))
