"""Threshold-indexed dynamic monitoring strategies and consistency checks.

A strategy prescribes, at every month, an interval (lo, hi) of permitted
gaps since the last monitoring visit: ``window_below`` applies while the
last observed marker sits below the threshold ``x``, ``window_above`` at or
above it, and ``override_window`` whenever the override flag is raised.
Subject data deviate from a strategy the first month the running gap
exceeds the applicable ``hi``, or a visit happens before the gap reaches
``lo``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UndefinedHistory

DEFAULT_WINDOW_BELOW = (2, 7)
DEFAULT_WINDOW_ABOVE = (8, 13)
DEFAULT_WINDOW_OVERRIDE = (2, 7)


def _check_window(name, win):
    lo, hi = int(win[0]), int(win[1])
    if not (1 <= lo <= hi):
        raise ConfigError(f"{name} must satisfy 1 <= lo <= hi, got {win}")
    return lo, hi


@dataclass(frozen=True)
class ThresholdStrategy:
    """Monitor within ``window_below`` under the threshold, ``window_above`` over it."""

    x: float
    window_below: tuple = DEFAULT_WINDOW_BELOW
    window_above: tuple = DEFAULT_WINDOW_ABOVE
    override_window: tuple = DEFAULT_WINDOW_OVERRIDE

    def __post_init__(self):
        object.__setattr__(self, "window_below",
                           _check_window("window_below", self.window_below))
        object.__setattr__(self, "window_above",
                           _check_window("window_above", self.window_above))
        object.__setattr__(self, "override_window",
                           _check_window("override_window", self.override_window))
        if self.window_below[1] > self.window_above[1]:
            raise ConfigError("window_below.hi must not exceed window_above.hi")


@dataclass(frozen=True)
class StrategyGrid:
    """Strictly increasing thresholds sharing one window configuration."""

    strategies: tuple

    def __post_init__(self):
        xs = [s.x for s in self.strategies]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ConfigError("grid thresholds must be strictly increasing")
        wins = {
            (s.window_below, s.window_above, s.override_window)
            for s in self.strategies
        }
        if len(wins) > 1:
            raise ConfigError("grid strategies must share their windows")

    @classmethod
    def default(cls, x_start=200.0, x_stop=500.0, x_step=10.0,
                window_below=DEFAULT_WINDOW_BELOW,
                window_above=DEFAULT_WINDOW_ABOVE,
                override_window=DEFAULT_WINDOW_OVERRIDE):
        xs = np.arange(x_start, x_stop + 0.5 * x_step, x_step)
        return cls(tuple(
            ThresholdStrategy(float(x), window_below, window_above,
                              override_window)
            for x in xs
        ))

    @property
    def xs(self):
        return np.array([s.x for s in self.strategies])

    def __len__(self):
        return len(self.strategies)

    def __iter__(self):
        return iter(self.strategies)

    def __getitem__(self, i):
        return self.strategies[i]


def applicable_window(strategy, row):
    """Window in force given a row's observed state.

    Override takes precedence; otherwise the carried-forward marker decides
    (values at or above the threshold use the "above" window). Raises
    :class:`UndefinedHistory` when no marker has ever been observed and no
    override is active.
    """
    if row.override_flag == 1:
        return strategy.override_window
    marker = row.last_observed_marker
    if np.isnan(marker):
        raise UndefinedHistory(
            f"no observed marker at or before t={row.t} and no override; "
            "the strategy window is undefined"
        )
    if marker < strategy.x:
        return strategy.window_below
    return strategy.window_above


def consistency_horizon(strategy, record):
    """First month the record deviates from the strategy, or horizon + 1.

    The decision at month t is governed by the state observed at t - 1:
    deviation happens when the pre-decision gap exceeds the applicable
    window's ``hi`` (monitoring overdue, whether or not a visit happens that
    month) or when a visit occurs with the gap still below ``lo``. Month 0
    can only deviate if the record enters with ``months_since_last_monitor``
    already past the window.
    """
    rows = record.rows
    first = rows[0]
    lo, hi = applicable_window(strategy, first)
    if first.months_since_last_monitor > hi:
        return 0
    for prev, row in zip(rows, rows[1:]):
        lo, hi = applicable_window(strategy, prev)
        gap = prev.months_since_last_monitor + 1
        if gap > hi:
            return row.t
        if row.monitor == 1 and gap < lo:
            return row.t
    return record.horizon + 1


def horizon_matrix(cohort, grid):
    """Vectorized consistency horizons, one row per subject, one column per x.

    Equals ``consistency_horizon`` applied to every (subject, strategy) pair;
    months with no deviation through follow-up yield ``horizon + 1``.
    """
    prev_last, prev_ovr, gap = cohort.prev_state()
    if np.any(np.isnan(prev_last)):
        raise UndefinedHistory("cohort has rows with no marker history")
    t = cohort.t
    monitored = cohort.monitor == 1
    starts = cohort.offsets[:-1]
    big = cohort.horizon + 1
    n, k = cohort.n_subjects, len(grid)
    out = np.empty((n, k), dtype=np.int64)
    ovr = prev_ovr == 1
    s0 = grid[0]
    lo_o, hi_o = s0.override_window
    lo_b, hi_b = s0.window_below
    lo_a, hi_a = s0.window_above
    for j, strat in enumerate(grid):
        below = prev_last < strat.x
        lo = np.where(ovr, lo_o, np.where(below, lo_b, lo_a))
        hi = np.where(ovr, hi_o, np.where(below, hi_b, hi_a))
        dev = (gap > hi) | (monitored & (gap < lo))
        # month 0 only deviates if the entry gap already exceeds hi
        dev[starts] = gap[starts] > hi[starts]
        month = np.where(dev, t, big)
        out[:, j] = np.minimum.reduceat(month, starts)
    return out
