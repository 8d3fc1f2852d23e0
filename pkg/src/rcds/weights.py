"""Monitoring-probability model and cumulative inverse-probability weights.

The monitoring model is a pooled logistic regression over decision months
(t >= 1) of the original, unexpanded person-time. Each decision is explained
by the state observed the month before: carried-forward marker, months since
the last visit, override flag, and optionally calendar month and baseline
covariates.

Two weighting schemes are available. The default, ``censoring``, inverts the
probability of *remaining consistent* with a clone's strategy: months inside
the permitted window contribute factor one; months where the gap sits below
the window's lo (a visit would censor) contribute num/(1 - p); months where
the gap reaches hi (a missed visit dooms the clone) contribute num/p, and
trajectories the within-protocol regime cannot produce get weight zero. This
makes the weighted clone population reproduce the observational process
conditioned month-by-month to the strategy's windows, the same regime the
``natural`` oracle rule simulates. The ``decision`` scheme inverts the
probability of every observed decision (factors num/f at all months); it is
the classical construction for point-window (deterministic) strategies, where
the two schemes coincide exactly, and its weights depend on (subject, t)
only.
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .cohort import baseline_design
from .errors import ConfigError, NonConvergence, PositivityViolation, SeparationError
from .glm import BINOMIAL_LOGIT, DesignMatrix, fit_glm, predict, rcs_basis

PROB_FLOOR = 1e-6


@dataclass(frozen=True)
class MonitorFeatureSpec:
    """Declared history feature map for the monitoring model."""

    marker: str = "rcs"          # "rcs" | "linear" | "none"
    marker_knots: int = 3
    gap: str = "linear"          # "linear" | "categorical"
    gap_cap: int = 13            # categorical gaps pooled at this value and above
    override: bool = True
    month: str = "none"          # "none" | "linear"
    baseline: tuple = ()

    def __post_init__(self):
        if self.marker not in ("rcs", "linear", "none"):
            raise ConfigError(f"unknown marker feature {self.marker!r}")
        if self.gap not in ("linear", "categorical"):
            raise ConfigError(f"unknown gap feature {self.gap!r}")
        if self.month not in ("none", "linear"):
            raise ConfigError(f"unknown month feature {self.month!r}")
        if self.marker == "rcs" and self.marker_knots < 3:
            raise ConfigError("marker_knots must be >= 3 for a spline")


@dataclass
class MonitorModel:
    """Fitted monitoring-probability model with its feature bookkeeping."""

    fit: object
    spec: MonitorFeatureSpec
    marker_knots: np.ndarray | None
    columns: list[str]
    n_decisions: int

    @property
    def loglik(self):
        return self.fit.loglik

    @property
    def iterations(self):
        return self.fit.iterations


def _decision_state(cohort):
    prev_last, prev_ovr, gap = cohort.prev_state()
    dec = cohort.decision_rows()
    return {
        "marker": prev_last[dec],
        "gap": gap[dec].astype(np.float64),
        "override": prev_ovr[dec].astype(np.float64),
        "month": cohort.t[dec].astype(np.float64),
        "subject": cohort.subject_index_per_row()[dec],
        "monitored": (cohort.monitor[dec] == 1),
        "t": cohort.t[dec],
    }


def _monitor_design(cohort, spec, state, marker_knots, case_weights=None):
    cols = [np.ones(state["gap"].size)]
    names = ["intercept"]
    if spec.marker == "linear":
        cols.append(state["marker"])
        names.append("marker")
    elif spec.marker == "rcs":
        basis = rcs_basis(state["marker"], marker_knots)
        cols.extend(basis.T)
        names.append("marker")
        names.extend(f"marker_rcs{i}" for i in range(1, basis.shape[1]))
    if spec.gap == "linear":
        cols.append(state["gap"])
        names.append("gap")
    else:
        capped = np.minimum(state["gap"], spec.gap_cap)
        for g in range(2, spec.gap_cap + 1):
            cols.append((capped == g).astype(np.float64))
            names.append(f"gap={g}")
    if spec.override:
        cols.append(state["override"])
        names.append("override")
    if spec.month == "linear":
        cols.append(state["month"])
        names.append("month")
    if spec.baseline:
        bx, bnames = baseline_design(cohort, list(spec.baseline))
        for j, nm in enumerate(bnames):
            cols.append(bx[state["subject"], j])
            names.append(nm)
    return DesignMatrix(np.column_stack(cols), names, weights=case_weights)


def fit_monitor_model(cohort, spec=MonitorFeatureSpec(), multiplicity=None):
    """Pooled logistic regression of the monitoring decision on observed history.

    ``multiplicity`` carries per-subject bootstrap counts as case weights.
    Raises :class:`SeparationError` when the decision is degenerate or a
    feature separates it perfectly.
    """
    state = _decision_state(cohort)
    if state["gap"].size == 0:
        raise SeparationError("cohort has no decision person-months")
    mon = state["monitored"]
    case = None
    if multiplicity is not None:
        multiplicity = np.asarray(multiplicity, dtype=np.float64)
        case = multiplicity[state["subject"]]
        pos = case > 0
        has_mon = np.any(mon & pos)
        has_non = np.any(~mon & pos)
    else:
        has_mon = bool(mon.any())
        has_non = bool((~mon).any())
    if not (has_mon and has_non):
        raise SeparationError(
            "monitoring response is degenerate: need at least one monitored "
            "and one unmonitored person-month"
        )
    knots = None
    if spec.marker == "rcs":
        qs = np.linspace(0.1, 0.9, spec.marker_knots)
        knots = np.quantile(state["marker"], qs)
        if np.any(np.diff(knots) <= 0):
            # marker too concentrated for a spline; fall back to linear
            knots = None
            spec = dataclasses.replace(spec, marker="linear")
    design = _monitor_design(cohort, spec, state, knots, case)
    try:
        fit = fit_glm(design, mon.astype(np.float64), BINOMIAL_LOGIT)
    except NonConvergence as err:
        last = err.trajectory[-1] if err.trajectory else None
        if last is not None and np.max(np.abs(last)) > 15:
            feature = design.columns[int(np.argmax(np.abs(last)))]
            raise SeparationError(
                f"feature {feature!r} appears to separate the monitoring "
                "decision perfectly",
                feature=feature,
            ) from err
        raise
    if np.max(np.abs(fit.coef)) > 15:
        feature = design.columns[int(np.argmax(np.abs(fit.coef)))]
        raise SeparationError(
            f"feature {feature!r} appears to separate the monitoring decision "
            "perfectly",
            feature=feature,
        )
    return MonitorModel(fit=fit, spec=spec, marker_knots=knots,
                        columns=design.columns, n_decisions=int(mon.size))


def decision_probabilities(model, cohort):
    """Fitted P(monitor = 1) at every decision month of a cohort."""
    state = _decision_state(cohort)
    design = _monitor_design(cohort, model.spec, state, model.marker_knots)
    return predict(model.fit, design)


def marginal_rates(cohort, multiplicity=None):
    """Per-month monitoring rates over decision rows; the stabilizing
    numerator (a saturated-in-month logistic model)."""
    state = _decision_state(cohort)
    K = cohort.horizon
    w = np.ones(state["t"].size)
    if multiplicity is not None:
        w = np.asarray(multiplicity, dtype=np.float64)[state["subject"]]
    tot = np.bincount(state["t"], weights=w, minlength=K + 1)
    hit = np.bincount(state["t"], weights=w * state["monitored"], minlength=K + 1)
    rates = np.full(K + 1, np.nan)
    nz = tot > 0
    rates[nz] = hit[nz] / tot[nz]
    return rates


class _WeightContext:
    """Shared per-row quantities for weight-factor construction."""

    def __init__(self, cohort, model, numerator, multiplicity=None):
        self.cohort = cohort
        prev_last, prev_ovr, gap = cohort.prev_state()
        self.prev_last = prev_last
        self.prev_ovr = prev_ovr
        self.gap = gap
        self.decision = cohort.decision_rows()
        self.monitored = cohort.monitor == 1
        self.subject = cohort.subject_index_per_row()
        p1 = np.full(cohort.n_rows, np.nan)
        p1[self.decision] = decision_probabilities(model, cohort)
        self.p1 = p1
        if numerator == "one":
            self.num1 = np.ones(cohort.n_rows)
            self.num0 = np.ones(cohort.n_rows)
        elif numerator == "marginal":
            rates = marginal_rates(cohort, multiplicity)
            r = rates[cohort.t]
            self.num1 = r
            self.num0 = 1.0 - r
        else:
            raise ConfigError(f"unknown numerator {numerator!r}")

    def scatter(self, flat, fill):
        """Spread a flat per-row array into a dense (n_subjects, K+1) matrix."""
        out = np.full((self.cohort.n_subjects, self.cohort.horizon + 1), fill)
        out[self.subject, self.cohort.t] = flat
        return out

    def check_floor(self, bad_mask, what):
        if not np.any(bad_mask):
            return
        subs = self.subject[bad_mask]
        ts = self.cohort.t[bad_mask]
        rows = [(self.cohort.subject_ids[s], int(t))
                for s, t in zip(subs[:20], ts[:20])]
        raise PositivityViolation(
            f"{int(bad_mask.sum())} person-months have fitted probability of "
            f"{what} below {PROB_FLOOR:g}; first offenders: {rows}",
            rows=rows,
        )


def _decision_factor_paths(ctx):
    """Cumulative num/f weights of the observed decisions, per subject-month.

    The baseline month is a protocol visit (factor one). Returns a dense
    (n_subjects, horizon + 1) matrix of cumulative weights.
    """
    mon = ctx.monitored & ctx.decision
    non = ~ctx.monitored & ctx.decision
    denom = np.where(ctx.monitored, ctx.p1, 1.0 - ctx.p1)
    ctx.check_floor(ctx.decision & (denom < PROB_FLOOR), "the observed decision")
    factor = np.ones(ctx.cohort.n_rows)
    factor[mon] = ctx.num1[mon] / ctx.p1[mon]
    factor[non] = ctx.num0[non] / (1.0 - ctx.p1[non])
    return np.multiply.accumulate(ctx.scatter(factor, 1.0), axis=1)


def _censoring_factor_paths(ctx, strategy):
    """Cumulative inverse-probability-of-remaining-consistent weights for one
    strategy's clones, per subject-month.

    Months with the gap inside [lo, hi) contribute factor one; gap < lo
    contributes num0/(1 - p) when unmonitored (a visit would censor the
    clone); gap = hi contributes num1/p when monitored (a missed visit dooms
    it). Trajectories impossible under the within-window regime get weight
    zero from the offending month on.
    """
    lo_o, hi_o = strategy.override_window
    lo_b, hi_b = strategy.window_below
    lo_a, hi_a = strategy.window_above
    ovr = ctx.prev_ovr == 1
    below = ctx.prev_last < strategy.x
    lo = np.where(ovr, lo_o, np.where(below, lo_b, lo_a))
    hi = np.where(ovr, hi_o, np.where(below, hi_b, hi_a))
    early = ctx.decision & (ctx.gap < lo)
    due = ctx.decision & (ctx.gap == hi)
    ctx.check_floor(early & (1.0 - ctx.p1 < PROB_FLOOR),
                    "withholding a premature visit")
    ctx.check_floor(due & (ctx.p1 < PROB_FLOOR), "the required visit")
    factor = np.ones(ctx.cohort.n_rows)
    m = early & ~ctx.monitored
    factor[m] = ctx.num0[m] / (1.0 - ctx.p1[m])
    factor[early & ctx.monitored] = 0.0  # premature visit: censored anyway
    m = due & ctx.monitored
    factor[m] = ctx.num1[m] / ctx.p1[m]
    factor[due & ~ctx.monitored] = 0.0   # doomed to over-wait next month
    return np.multiply.accumulate(ctx.scatter(factor, 1.0), axis=1)


def clone_horizon_weights(cohort, model, grid, numerator="one",
                          scheme="censoring", multiplicity=None):
    """(n_subjects, n_strategies) weights at the horizon month."""
    ctx = _WeightContext(cohort, model, numerator, multiplicity)
    out = np.empty((cohort.n_subjects, len(grid)))
    if scheme == "decision":
        out[:] = _decision_factor_paths(ctx)[:, -1][:, None]
        return out
    if scheme != "censoring":
        raise ConfigError(f"unknown weight scheme {scheme!r}")
    for j, strat in enumerate(grid):
        out[:, j] = _censoring_factor_paths(ctx, strat)[:, -1]
    return out


class CensoringWeightPlan:
    """Replicate-invariant layout of the censoring-scheme weight factors.

    For every strategy, records which cohort rows contribute a
    1/(1 - p) factor (gap below the window with no visit), which contribute
    1/p (required visit taken), and which clones are pinned at weight zero
    (a premature visit or a missed required visit). Only the fitted
    probabilities change across bootstrap replicates, so horizon weights
    reduce to per-subject sums of log-probabilities over these fixed rows.
    """

    def __init__(self, cohort, grid):
        self.cohort = cohort
        self.grid = grid
        prev_last, prev_ovr, gap = cohort.prev_state()
        decision = cohort.decision_rows()
        mon = cohort.monitor == 1
        subject = cohort.subject_index_per_row()
        n, k = cohort.n_subjects, len(grid)
        low_rows, low_sub, low_off = [], [], [0]
        hit_rows, hit_sub, hit_off = [], [], [0]
        self.zeroed = np.zeros((n, k), dtype=bool)
        ovr = prev_ovr == 1
        for j, strat in enumerate(grid):
            lo_o, hi_o = strat.override_window
            lo_b, hi_b = strat.window_below
            lo_a, hi_a = strat.window_above
            below = prev_last < strat.x
            lo = np.where(ovr, lo_o, np.where(below, lo_b, lo_a))
            hi = np.where(ovr, hi_o, np.where(below, hi_b, hi_a))
            early = decision & (gap < lo)
            due = decision & (gap == hi)
            rows = np.flatnonzero(early & ~mon)
            low_rows.append(rows)
            low_sub.append(subject[rows])
            low_off.append(low_off[-1] + rows.size)
            rows = np.flatnonzero(due & mon)
            hit_rows.append(rows)
            hit_sub.append(subject[rows])
            hit_off.append(hit_off[-1] + rows.size)
            dead = (early & mon) | (due & ~mon)
            self.zeroed[subject[dead], j] = True
        self.low_rows = np.concatenate(low_rows) if low_rows else np.empty(0, int)
        self.low_sub = np.concatenate(low_sub) if low_sub else np.empty(0, int)
        self.low_off = np.array(low_off)
        self.hit_rows = np.concatenate(hit_rows) if hit_rows else np.empty(0, int)
        self.hit_sub = np.concatenate(hit_sub) if hit_sub else np.empty(0, int)
        self.hit_off = np.array(hit_off)

    def horizon_weights(self, p1_rows):
        """(n_subjects, n_strategies) horizon weights given fitted per-row
        monitoring probabilities (aligned with cohort rows)."""
        n, k = self.cohort.n_subjects, len(self.grid)
        p_low = 1.0 - p1_rows[self.low_rows]
        p_hit = p1_rows[self.hit_rows]
        bad = (p_low < PROB_FLOOR) | ~np.isfinite(p_low)
        if np.any(bad):
            raise PositivityViolation(
                f"{int(bad.sum())} person-months have fitted probability of "
                f"withholding a premature visit below {PROB_FLOOR:g}"
            )
        bad = (p_hit < PROB_FLOOR) | ~np.isfinite(p_hit)
        if np.any(bad):
            raise PositivityViolation(
                f"{int(bad.sum())} person-months have fitted probability of "
                f"the required visit below {PROB_FLOOR:g}"
            )
        log_low = np.log(p_low)
        log_hit = np.log(p_hit)
        out = np.zeros((n, k))
        for j in range(k):
            a, b = self.low_off[j], self.low_off[j + 1]
            logw = np.bincount(self.low_sub[a:b], weights=log_low[a:b],
                               minlength=n)
            a, b = self.hit_off[j], self.hit_off[j + 1]
            logw += np.bincount(self.hit_sub[a:b], weights=log_hit[a:b],
                                minlength=n)
            out[:, j] = np.exp(-logw)
        out[self.zeroed] = 0.0
        return out


@dataclass
class WeightedExpandedDataset:
    """Expanded dataset plus per-row cumulative IP weights."""

    ds: object
    w: np.ndarray
    numerator: str
    scheme: str
    truncation: float | None
    truncated_fraction: float
    model: MonitorModel = field(repr=False, default=None)

    def __getattr__(self, name):
        return getattr(self.ds, name)


def attach_weights(ds, model, numerator="one", truncation=None,
                   scheme="censoring"):
    """Attach cumulative IP weights to every expanded row.

    ``scheme`` picks the weighting construction (see the module docstring);
    ``truncation`` caps weights at the given percentile of the at-risk
    horizon-row weight distribution, and percentile 100 leaves the weights
    untouched exactly. Raises :class:`PositivityViolation` when a fitted
    probability at a weight-relevant month falls below the floor.
    """
    cohort = ds.cohort
    ctx = _WeightContext(cohort, model, numerator)
    sub = ds.subject_idx
    w = np.empty(ds.n_rows)
    if scheme == "decision":
        paths = _decision_factor_paths(ctx)
        w[:] = paths[sub, ds.t]
    elif scheme == "censoring":
        for j, strat in enumerate(ds.grid):
            rows = ds.x_idx == j
            paths = _censoring_factor_paths(ctx, strat)
            w[rows] = paths[sub[rows], ds.t[rows]]
    else:
        raise ConfigError(f"unknown weight scheme {scheme!r}")
    truncated_fraction = 0.0
    if truncation is not None:
        if not (0 < truncation <= 100):
            raise ConfigError("truncation percentile must be in (0, 100]")
        at_horizon = (ds.t == ds.horizon) & (ds.at_risk == 1)
        if np.any(at_horizon):
            cap = np.percentile(w[at_horizon], truncation)
            truncated_fraction = float(np.mean(w > cap))
            w = np.minimum(w, cap)
    return WeightedExpandedDataset(
        ds=ds, w=w, numerator=numerator, scheme=scheme, truncation=truncation,
        truncated_fraction=truncated_fraction, model=model,
    )


@dataclass
class WeightSummary:
    n: int
    minimum: float
    p25: float
    median: float
    mean: float
    p75: float
    p99: float
    maximum: float
    truncated_fraction: float

    def to_dict(self):
        return {
            "n": self.n, "min": self.minimum, "p25": self.p25,
            "median": self.median, "mean": self.mean, "p75": self.p75,
            "p99": self.p99, "max": self.maximum,
            "truncated_fraction": self.truncated_fraction,
        }


def weight_summary(wds):
    """Distribution of weights over at-risk rows, for the run report."""
    w = wds.w[wds.ds.at_risk == 1]
    if w.size == 0:
        w = np.array([np.nan])
    return WeightSummary(
        n=int(w.size), minimum=float(np.min(w)),
        p25=float(np.percentile(w, 25)), median=float(np.percentile(w, 50)),
        mean=float(np.mean(w)), p75=float(np.percentile(w, 75)),
        p99=float(np.percentile(w, 99)), maximum=float(np.max(w)),
        truncated_fraction=wds.truncated_fraction,
    )
