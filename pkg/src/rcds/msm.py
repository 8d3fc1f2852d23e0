"""Dynamic marginal structural models over the strategy grid.

Two weighted Poisson-log models are fit on horizon responses of the
replicated-and-censored dataset: one for the binary failure outcome (a
log-binomial surrogate whose variance misspecification is harmless because
intervals come from the bootstrap) and one for the measurement count. The
strategy enters through a restricted cubic spline; baseline covariates are
adjusted for and then standardized out against the cohort's empirical
baseline distribution. The subject-level bootstrap re-runs the entire
pipeline, including the monitoring-model fit, inside every replicate.
"""

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cohort import baseline_design
from .errors import (
    BootstrapUnstable,
    ConfigError,
    DegenerateResponse,
    NonConvergence,
    PositivityViolation,
    RankError,
    SeparationError,
)
from .expansion import expand, horizon_table
from .glm import POISSON_LOG, DesignMatrix, GlmFit, fit_glm, rcs_basis
from .strategies import horizon_matrix
from .weights import (
    MonitorFeatureSpec,
    attach_weights,
    clone_horizon_weights,
    fit_monitor_model,
    weight_summary,
)

DEGENERATE_ETA = -30.0


@dataclass(frozen=True)
class MsmSpec:
    """Model layout shared by the outcome and resource MSMs."""

    strategy_knots: tuple | None = None  # None: percentiles 5/35/65/95 of the grid
    baseline_terms: object = "all"

    def knots_for(self, grid):
        if self.strategy_knots is not None:
            k = np.asarray(self.strategy_knots, dtype=np.float64)
            if k.size < 3:
                raise ConfigError("strategy spline needs at least 3 knots")
            return k
        xs = grid.xs
        if xs.size >= 4:
            return np.percentile(xs, [5, 35, 65, 95])
        if xs.size == 3:
            return xs.astype(np.float64)
        return None  # tiny grid: linear in x


@dataclass
class WeightOptions:
    """How inverse-probability weights are built for the MSM stage."""

    numerator: str = "one"        # "one" | "marginal"
    truncation: float | None = None
    weighting: str = "ip"         # "ip" | "none" (diagnostic, unweighted)
    scheme: str = "censoring"     # "censoring" | "decision"
    monitor_spec: MonitorFeatureSpec = MonitorFeatureSpec()


@dataclass
class DoseResponseTable:
    """Standardized (risk, usage) per threshold with bootstrap intervals."""

    xs: np.ndarray
    risk: np.ndarray
    usage: np.ndarray
    risk_lo: np.ndarray
    risk_hi: np.ndarray
    usage_lo: np.ndarray
    usage_hi: np.ndarray
    n_atrisk: np.ndarray
    risk_se: np.ndarray | None = None
    usage_se: np.ndarray | None = None
    n_boot: int = 0
    n_failed: int = 0

    def __len__(self):
        return self.xs.size

    @classmethod
    def point_only(cls, xs, risk, usage, n_atrisk):
        nan = np.full(xs.size, np.nan)
        return cls(xs=xs, risk=risk, usage=usage, risk_lo=nan.copy(),
                   risk_hi=nan.copy(), usage_lo=nan.copy(),
                   usage_hi=nan.copy(), n_atrisk=n_atrisk)


def _strategy_basis(xvals, knots):
    if knots is None:
        return xvals[:, None], ["x"]
    basis = rcs_basis(xvals, knots)
    names = ["x"] + [f"x_rcs{i}" for i in range(1, basis.shape[1])]
    return basis, names


def _msm_design(xvals, knots, base_X, base_names, weights):
    sb, snames = _strategy_basis(xvals, knots)
    cols = [np.ones(xvals.size), *sb.T]
    names = ["intercept", *snames]
    for j, nm in enumerate(base_names):
        cols.append(base_X[:, j])
        names.append(nm)
    return DesignMatrix(np.column_stack(cols), names, weights=weights)


def _degenerate_fit(columns):
    coef = np.zeros(len(columns))
    coef[0] = DEGENERATE_ETA
    return GlmFit(coef=coef, columns=list(columns), family=POISSON_LOG,
                  converged=True, iterations=0, deviance=0.0, loglik=0.0,
                  cond=1.0, se=None, degenerate=True)


def _fit_horizon_msm(cohort, grid, spec, subject_idx, x_idx, response, weights):
    """Weighted Poisson fit of horizon responses on spline(x) + baseline terms."""
    keep = ~np.isnan(response) & (weights > 0)
    subject_idx, x_idx = subject_idx[keep], x_idx[keep]
    response, weights = response[keep], weights[keep]
    if response.size == 0:
        raise ConfigError("no usable horizon responses")
    if np.unique(x_idx).size < 2:
        raise ConfigError(
            "horizon responses cover fewer than 2 distinct thresholds; the "
            "strategy curve is not identifiable"
        )
    knots = spec.knots_for(grid)
    base_X, base_names = baseline_design(cohort, spec.baseline_terms)
    design = _msm_design(grid.xs[x_idx], knots, base_X[subject_idx],
                         base_names, weights)
    if not np.any((response > 0) & (weights > 0)):
        warnings.warn(
            "all horizon responses are zero; returning a curve pinned at zero",
            DegenerateResponse,
        )
        return _degenerate_fit(design.columns)
    return fit_glm(design, response, POISSON_LOG)


def fit_outcome_msm(wds, spec=MsmSpec()):
    """Outcome MSM: weighted Poisson regression of failure at the horizon."""
    ds = wds.ds
    mask = (ds.t == ds.horizon) & (ds.at_risk == 1)
    return _fit_horizon_msm(
        ds.cohort, ds.grid, spec, ds.subject_idx[mask], ds.x_idx[mask],
        ds.response_y[mask], wds.w[mask],
    )


def fit_resource_msm(wds, spec=MsmSpec()):
    """Resource MSM: weighted log-linear regression of the measurement count."""
    ds = wds.ds
    mask = (ds.t == ds.horizon) & (ds.at_risk == 1)
    return _fit_horizon_msm(
        ds.cohort, ds.grid, spec, ds.subject_idx[mask], ds.x_idx[mask],
        ds.response_d[mask].astype(np.float64), wds.w[mask],
    )


def standardize(fit, cohort, grid, spec=MsmSpec(), multiplicity=None):
    """Standardized mean per threshold over the empirical baseline distribution.

    For each x the strategy basis is pinned at x, predictions are taken for
    every subject's baseline covariates, and their (multiplicity-weighted)
    mean is returned; identical to averaging :func:`rcds.glm.predict` over an
    assembled per-x design.
    """
    knots = spec.knots_for(grid)
    base_X, base_names = baseline_design(cohort, spec.baseline_terms)
    p_strategy = 1 + (1 if knots is None else len(knots) - 1)
    coef_s = fit.coef[:p_strategy]      # intercept + strategy basis
    coef_b = fit.coef[p_strategy:]
    lp_base = base_X @ coef_b
    if multiplicity is None:
        wsum, wtot = None, cohort.n_subjects
    else:
        wsum = np.asarray(multiplicity, dtype=np.float64)
        wtot = wsum.sum()
    sb, _ = _strategy_basis(grid.xs, knots)
    out = np.empty(len(grid))
    for j in range(len(grid)):
        lp = coef_s[0] + sb[j] @ coef_s[1:] + lp_base
        mu = np.exp(np.clip(lp, -300, 300))
        out[j] = mu.mean() if wsum is None else float((wsum * mu).sum() / wtot)
    return out


def _curves_for(cohort, grid, spec, wopts, horizons, multiplicity=None):
    """One full pipeline pass on (possibly multiplicity-weighted) data."""
    ht = horizon_table(cohort, grid, horizons)
    if wopts.weighting == "none":
        w = np.ones(ht.subject_idx.size)
    else:
        model = fit_monitor_model(cohort, wopts.monitor_spec, multiplicity)
        w_clone = clone_horizon_weights(cohort, model, grid, wopts.numerator,
                                        wopts.scheme, multiplicity)
        w = w_clone[ht.subject_idx, ht.x_idx]
    if wopts.truncation is not None and w.size:
        cap = np.percentile(
            np.repeat(w, multiplicity[ht.subject_idx].astype(np.int64))
            if multiplicity is not None else w,
            wopts.truncation,
        )
        w = np.minimum(w, cap)
    if multiplicity is not None:
        w = w * multiplicity[ht.subject_idx]
    fit_y = _fit_horizon_msm(cohort, grid, spec, ht.subject_idx, ht.x_idx,
                             ht.y, w)
    fit_d = _fit_horizon_msm(cohort, grid, spec, ht.subject_idx, ht.x_idx,
                             ht.d, w)
    risk = standardize(fit_y, cohort, grid, spec, multiplicity)
    usage = standardize(fit_d, cohort, grid, spec, multiplicity)
    return risk, usage


@dataclass
class PointAnalysis:
    """Point-estimate pipeline output with diagnostics."""

    table: DoseResponseTable
    monitor_model: object
    weights: object
    weighted: object


def analyze_cohort(cohort, grid, spec=MsmSpec(), wopts=WeightOptions()):
    """Expand, weight, fit both MSMs, and standardize; no bootstrap.

    Uses the row-level expanded dataset so weight diagnostics reflect the
    full person-strategy-month table.
    """
    ds = expand(cohort, grid)
    if wopts.weighting == "none":
        monitor_model = None
        wds = attach_weights_unit(ds)
    else:
        monitor_model = fit_monitor_model(cohort, wopts.monitor_spec)
        wds = attach_weights(ds, monitor_model, wopts.numerator,
                             wopts.truncation, wopts.scheme)
    fit_y = fit_outcome_msm(wds, spec)
    fit_d = fit_resource_msm(wds, spec)
    risk = standardize(fit_y, cohort, grid, spec)
    usage = standardize(fit_d, cohort, grid, spec)
    ht = horizon_table(cohort, grid, ds.horizons)
    n_atrisk = ht.uncensored.sum(axis=0)
    table = DoseResponseTable.point_only(grid.xs, risk, usage, n_atrisk)
    return PointAnalysis(table=table, monitor_model=monitor_model,
                         weights=weight_summary(wds), weighted=wds)


def attach_weights_unit(ds):
    """All-ones weights wrapper for unweighted comparison runs."""
    from .weights import WeightedExpandedDataset

    return WeightedExpandedDataset(
        ds=ds, w=np.ones(ds.n_rows), numerator="one", scheme="none",
        truncation=None, truncated_fraction=0.0, model=None,
    )


_REPLICATE_ERRORS = (SeparationError, NonConvergence, RankError,
                     PositivityViolation, ConfigError)


class _BootstrapEngine:
    """Precomputed replicate machinery for the censoring-scheme pipeline.

    Every structure that does not depend on the resample (designs, horizon
    table, weight-factor row layout) is built once; a replicate only refits
    the two GLM stages with new case weights and re-aggregates fixed
    log-probability contributions.
    """

    def __init__(self, cohort, grid, spec, wopts, horizons):
        from .weights import (
            CensoringWeightPlan,
            _decision_state,
            _monitor_design,
        )

        if wopts.scheme != "censoring" or wopts.numerator != "one" or \
                wopts.truncation is not None or wopts.weighting != "ip":
            raise ConfigError("fast path supports censoring/one weights only")
        self.cohort = cohort
        self.grid = grid
        self.spec = spec
        self.wopts = wopts
        self.ht = horizon_table(cohort, grid, horizons)
        self.plan = CensoringWeightPlan(cohort, grid)

        state = _decision_state(cohort)
        self.mon_state = state
        self.mon_response = state["monitored"].astype(np.float64)
        self.mon_subject = state["subject"]
        knots = None
        mspec = wopts.monitor_spec
        if mspec.marker == "rcs":
            qs = np.linspace(0.1, 0.9, mspec.marker_knots)
            knots = np.quantile(state["marker"], qs)
        self.mon_knots = knots
        self.mon_design = _monitor_design(cohort, mspec, state, knots)
        self.decision_rows = np.flatnonzero(cohort.decision_rows())

        knots_x = spec.knots_for(grid)
        base_X, base_names = baseline_design(cohort, spec.baseline_terms)
        self.base_X = base_X
        self.msm_design = _msm_design(
            grid.xs[self.ht.x_idx], knots_x, base_X[self.ht.subject_idx],
            base_names, np.ones(self.ht.x_idx.size))
        self.p_strategy = 1 + (1 if knots_x is None else len(knots_x) - 1)
        self.strategy_basis, _ = _strategy_basis(grid.xs, knots_x)
        self.y = self.ht.y
        self.d = self.ht.d
        self.y_ok = ~np.isnan(self.y)
        self.mon_start = None
        self.msm_start_y = None
        self.msm_start_d = None

    @staticmethod
    def _with_weights(design, w):
        # lightweight view sharing X; safe for concurrent replicates
        shell = DesignMatrix.__new__(DesignMatrix)
        shell.X = design.X
        shell.columns = design.columns
        shell.weights = w
        return shell

    def _fit_monitor(self, multiplicity):
        case = np.ones(self.mon_response.size) if multiplicity is None \
            else multiplicity[self.mon_subject]
        pos = self.mon_response[case > 0]
        if pos.size == 0 or pos.min() == pos.max():
            raise SeparationError("monitoring response degenerate in resample")
        fit = fit_glm(self._with_weights(self.mon_design, case),
                      self.mon_response, "binomial_logit",
                      compute_se=False, start=self.mon_start)
        if np.max(np.abs(fit.coef)) > 15:
            raise SeparationError("separation in resampled monitoring model")
        return fit

    def _horizon_weights(self, mon_fit):
        from scipy.special import expit

        p1 = np.full(self.cohort.n_rows, np.nan)
        p1[self.decision_rows] = expit(self.mon_design.X @ mon_fit.coef)
        return self.plan.horizon_weights(p1)

    def _fit_msm(self, response, weights, ok, start):
        keep = ok & (weights > 0)
        if np.unique(self.ht.x_idx[keep]).size < 2:
            raise ConfigError("resample covers fewer than 2 thresholds")
        w = np.where(keep, weights, 0.0)
        if not np.any((response > 0) & (w > 0)):
            return _degenerate_fit(self.msm_design.columns)
        resp = np.where(ok, response, 0.0)
        return fit_glm(self._with_weights(self.msm_design, w), resp,
                       POISSON_LOG, compute_se=False, start=start)

    def _standardize(self, fit, multiplicity):
        coef_s = fit.coef[:self.p_strategy]
        coef_b = fit.coef[self.p_strategy:]
        lp_base = self.base_X @ coef_b
        if multiplicity is None:
            wsum, wtot = None, self.cohort.n_subjects
        else:
            wsum = multiplicity
            wtot = multiplicity.sum()
        out = np.empty(len(self.grid))
        for j in range(len(self.grid)):
            lp = coef_s[0] + self.strategy_basis[j] @ coef_s[1:] + lp_base
            mu = np.exp(np.clip(lp, -300, 300))
            out[j] = mu.mean() if wsum is None else float((wsum * mu).sum() / wtot)
        return out

    def run(self, multiplicity, warm=False):
        mon_fit = self._fit_monitor(multiplicity)
        w_clone = self._horizon_weights(mon_fit)
        w = w_clone[self.ht.subject_idx, self.ht.x_idx]
        if multiplicity is not None:
            w = w * multiplicity[self.ht.subject_idx]
        fit_y = self._fit_msm(self.y, w, self.y_ok, self.msm_start_y)
        fit_d = self._fit_msm(self.d, w, np.ones_like(self.y_ok, dtype=bool),
                              self.msm_start_d)
        if warm:
            self.mon_start = mon_fit.coef
            if not fit_y.degenerate:
                self.msm_start_y = fit_y.coef
            if not fit_d.degenerate:
                self.msm_start_d = fit_d.coef
        risk = self._standardize(fit_y, multiplicity)
        usage = self._standardize(fit_d, multiplicity)
        return risk, usage


def bootstrap_pipeline(cohort, grid, spec=MsmSpec(), wopts=WeightOptions(),
                       B=200, seed=0, max_failed_fraction=0.05):
    """Point estimates plus percentile bootstrap intervals.

    Subjects are resampled with replacement (clones move with their
    subject); every replicate refits the monitoring model, recomputes
    weights, refits both MSMs, and restandardizes. Replicates that fail to
    fit are skipped; more than ``max_failed_fraction`` of failures raises
    :class:`BootstrapUnstable`. Deterministic given the master seed;
    replicate workers are capped by the RCDS_THREADS environment variable.
    """
    if B < 0:
        raise ConfigError("B must be >= 0")
    point = analyze_cohort(cohort, grid, spec, wopts)
    table = point.table
    if B == 0:
        return point
    horizons = point.weighted.ds.horizons
    n = cohort.n_subjects
    seeds = np.random.SeedSequence(seed).spawn(B)

    fast = (wopts.scheme == "censoring" and wopts.numerator == "one"
            and wopts.truncation is None and wopts.weighting == "ip")
    engine = None
    if fast:
        engine = _BootstrapEngine(cohort, grid, spec, wopts, horizons)
        engine.run(None, warm=True)  # seed the warm starts from the full data

    def one(b):
        rng = np.random.default_rng(seeds[b])
        idx = rng.integers(0, n, n)
        mult = np.bincount(idx, minlength=n).astype(np.float64)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateResponse)
            try:
                if engine is not None:
                    return engine.run(mult)
                return _curves_for(cohort, grid, spec, wopts, horizons, mult)
            except _REPLICATE_ERRORS:
                return None

    workers = int(os.environ.get("RCDS_THREADS", "1") or "1")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(one, range(B)))
    else:
        results = [one(b) for b in range(B)]

    ok = [r for r in results if r is not None]
    n_failed = B - len(ok)
    if n_failed > max_failed_fraction * B:
        raise BootstrapUnstable(
            f"{n_failed} of {B} bootstrap replicates failed to fit"
        )
    risks = np.array([r[0] for r in ok])
    usages = np.array([r[1] for r in ok])
    table.risk_lo = np.percentile(risks, 2.5, axis=0)
    table.risk_hi = np.percentile(risks, 97.5, axis=0)
    table.usage_lo = np.percentile(usages, 2.5, axis=0)
    table.usage_hi = np.percentile(usages, 97.5, axis=0)
    table.risk_se = np.std(risks, axis=0, ddof=1) if len(ok) > 1 else \
        np.zeros(len(grid))
    table.usage_se = np.std(usages, axis=0, ddof=1) if len(ok) > 1 else \
        np.zeros(len(grid))
    table.n_boot = B
    table.n_failed = n_failed
    return point
