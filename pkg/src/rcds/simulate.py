"""Synthetic longitudinal cohorts with a counterfactual oracle.

The data-generating process tracks, per subject and month, a latent marker
(AR(1)), a latent transient "flare" alarm, an absorbing failure state, and a
latent risk clock that monitoring visits can reset. Monitoring decisions read
*only* observed history (carried-forward marker, gap since the last visit,
override flag), which makes sequential exchangeability hold by construction.
The observed override flag updates only at visits, mirroring lab-detected
alarms; windows therefore never switch mid-gap and forced simulation stays
consistent with its strategy.

Within a month the order of events is: latent marker step, flare onset,
monitoring decision, visit effects (measurement, detection, risk-clock reset),
failure onset, dropout.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .cohort import (
    CATEGORICAL,
    CONTINUOUS,
    BaselineField,
    BaselineSchema,
    Cohort,
    _REASON_CODE,
)
from .errors import ConfigError

BAND_EDGES = (250.0, 400.0)
BAND_LEVELS = ("lt250", "250to399", "ge400")

SIM_SCHEMA = BaselineSchema(fields=(
    BaselineField("sex", CATEGORICAL, ("female", "male")),
    BaselineField("base_marker_band", CATEGORICAL, BAND_LEVELS),
    BaselineField("age", CONTINUOUS),
    BaselineField("calendar", CATEGORICAL, ("era0", "era1", "era2", "era3")),
))

ORACLE_RULES = ("earliest", "latest", "natural")
FORCED_RULES = ("earliest", "latest", "natural")


@dataclass(frozen=True)
class DgpParams:
    """Coefficients and hazards of the simulated data-generating process.

    The shipped defaults are calibration knobs, not substantive claims; they
    are mirrored in the versioned ``configs/dgp_default.yaml``.
    """

    horizon: int = 24
    marker_init_mean: float = 360.0
    marker_init_sd: float = 110.0
    drift_intercept: float = 18.0
    drift_slope: float = 0.96
    drift_sd: float = 28.0
    fail_intercept: float = -2.9
    fail_clock: float = 0.14
    fail_marker: float = -0.009
    resuppress_prob: float = 0.8
    mon_intercept: float = -1.4
    mon_marker: float = -0.005
    mon_gap: float = 0.45
    mon_override: float = 2.2
    override_hazard: float = 0.012
    dropout_hazard: float = 0.004
    seed: int = 20250801

    def validate(self):
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1 month")
        if self.marker_init_sd < 0 or self.drift_sd < 0:
            raise ConfigError("standard deviations must be >= 0")
        if not abs(self.drift_slope) < 1.0:
            raise ConfigError("drift_slope must lie in (-1, 1)")
        for name in ("resuppress_prob", "override_hazard", "dropout_hazard"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0) and not (name == "resuppress_prob" and v == 1.0):
                raise ConfigError(f"{name} must be a probability, got {v}")
        for name in ("marker_init_mean", "drift_intercept", "fail_intercept",
                     "fail_clock", "fail_marker", "mon_intercept", "mon_marker",
                     "mon_gap", "mon_override"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        self._check_positivity()

    def _check_positivity(self):
        """Monitoring probabilities must stay interior over a plausible state box."""
        sd_stat = self.drift_sd / max(np.sqrt(1 - self.drift_slope ** 2), 1e-9)
        spread = 4.0 * max(self.marker_init_sd, sd_stat)
        mean_stat = self.drift_intercept / max(1 - self.drift_slope, 1e-9)
        lo_m = min(self.marker_init_mean, mean_stat) - spread
        hi_m = max(self.marker_init_mean, mean_stat) + spread
        markers = np.linspace(max(lo_m, 0.0), hi_m, 25)
        gaps = np.arange(1, self.horizon + 2)
        probs = monitor_probability(
            self,
            markers[:, None, None],
            gaps[None, :, None],
            np.array([0, 1])[None, None, :],
        )
        if probs.min() <= 1e-8 or probs.max() >= 1 - 1e-8:
            raise ConfigError(
                "obs_monitor model reaches probabilities of 0/1 on the "
                "plausible state space; positivity fails"
            )

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown DGP parameters: {sorted(unknown)}")
        p = cls(**d)
        p.validate()
        return p


def monitor_probability(params, last_marker, gap, override):
    """Observational monitoring probability from observed history alone.

    This function is the code boundary that enforces sequential
    exchangeability: it accepts only the carried-forward marker, the months
    elapsed since the last visit, and the override flag.
    """
    logit = (
        params.mon_intercept
        + params.mon_marker * np.asarray(last_marker, dtype=np.float64)
        + params.mon_gap * np.asarray(gap, dtype=np.float64)
        + params.mon_override * np.asarray(override, dtype=np.float64)
    )
    return expit(logit)


def _observational_decision(params):
    def decide(t, last_marker, override, gap, u):
        p = monitor_probability(params, last_marker, gap, override)
        return u < p, p
    return decide


def _forced_decision(params, strategy, rule):
    lo_b, hi_b = strategy.window_below
    lo_a, hi_a = strategy.window_above
    lo_o, hi_o = strategy.override_window

    def windows(last_marker, override):
        ovr = override == 1
        below = last_marker < strategy.x
        lo = np.where(ovr, lo_o, np.where(below, lo_b, lo_a))
        hi = np.where(ovr, hi_o, np.where(below, hi_b, hi_a))
        return lo, hi

    def decide(t, last_marker, override, gap, u):
        lo, hi = windows(last_marker, override)
        if rule == "earliest":
            return gap >= lo, None
        if rule == "latest":
            return gap >= hi, None
        # natural: observational timing conditioned to the permitted window
        p = monitor_probability(params, last_marker, gap, override)
        p = np.where(gap < lo, 0.0, np.where(gap >= hi, 1.0, p))
        return u < p, None
    return decide


def _draws(seed_key, n, horizon):
    rng = np.random.default_rng(np.random.SeedSequence(seed_key))
    return {
        "normal": rng.standard_normal((n, horizon + 1)),
        "flare": rng.random((n, horizon + 1)),
        "monitor": rng.random((n, horizon + 1)),
        "rescue": rng.random((n, horizon + 1)),
        "fail": rng.random((n, horizon + 1)),
        "dropout": rng.random((n, horizon + 1)),
        "baseline": rng.random((n, 3)),
    }


def _run_kernel(params, n, draws, decide, keep_probs=False):
    """Shared transition kernel; observational and forced modes differ only
    in the monitoring decision rule passed in."""
    K = params.horizon
    U = params.marker_init_mean + params.marker_init_sd * draws["normal"][:, 0]
    last = U.copy()
    m = np.zeros(n, dtype=np.int64)
    clock = np.zeros(n, dtype=np.int64)
    flare = np.zeros(n, dtype=bool)
    failed = np.zeros(n, dtype=bool)
    override = np.zeros(n, dtype=np.int8)
    fue = np.full(n, K, dtype=np.int64)

    mon = np.zeros((n, K + 1), dtype=np.int8)
    obs = np.full((n, K + 1), np.nan)
    lastm = np.empty((n, K + 1))
    msince = np.zeros((n, K + 1), dtype=np.int64)
    ovr = np.zeros((n, K + 1), dtype=np.int8)
    probs = np.full((n, K + 1), np.nan) if keep_probs else None

    mon[:, 0] = 1
    obs[:, 0] = U
    lastm[:, 0] = U
    base_marker = U.copy()

    for t in range(1, K + 1):
        U = (params.drift_intercept + params.drift_slope * U
             + params.drift_sd * draws["normal"][:, t])
        flare |= (~flare) & (draws["flare"][:, t] < params.override_hazard)
        gap = m + 1
        visit, p = decide(t, last, override, gap, draws["monitor"][:, t])
        if keep_probs:
            probs[:, t] = p
        reset = visit & (draws["rescue"][:, t] < params.resuppress_prob)
        detected = visit & (failed | flare)
        clock = np.where(reset, 0, clock + 1)
        p_fail = expit(params.fail_intercept + params.fail_clock * clock
                       + params.fail_marker * U)
        failed |= (~failed) & (draws["fail"][:, t] < p_fail)
        last = np.where(visit, U, last)
        override = np.where(visit, detected.astype(np.int8), override)
        flare = np.where(visit, False, flare)
        m = np.where(visit, 0, gap)
        mon[:, t] = visit
        obs[:, t] = np.where(visit, U, np.nan)
        lastm[:, t] = last
        msince[:, t] = m
        ovr[:, t] = override
        if t < K:
            drop = (draws["dropout"][:, t] < params.dropout_hazard) & (fue == K)
            fue = np.where(drop, t, fue)

    return {
        "mon": mon, "obs": obs, "last": lastm, "msince": msince, "ovr": ovr,
        "fue": fue, "failed": failed, "base_marker": base_marker,
        "probs": probs,
    }


def _baseline_values(draws, base_marker):
    sex = (draws["baseline"][:, 0] < 0.35).astype(np.float64)
    band = np.digitize(base_marker, BAND_EDGES).astype(np.float64)
    age = np.clip(40.0 + 9.0 * _norm_ppf(draws["baseline"][:, 1]), 18.0, 75.0)
    calendar = np.floor(draws["baseline"][:, 2] * 4).clip(0, 3)
    return np.column_stack([sex, band, age, calendar])


def _norm_ppf(u):
    from scipy.special import ndtri
    return ndtri(np.clip(u, 1e-12, 1 - 1e-12))


def _pack_cohort(params, raw, draws):
    K = params.horizon
    n = raw["fue"].size
    fue = raw["fue"]
    tgrid = np.arange(K + 1)
    keep = tgrid[None, :] <= fue[:, None]
    y = np.where(fue == K, raw["failed"].astype(np.float64), np.nan)
    reason = np.where(
        fue == K, _REASON_CODE["administrative_end"], _REASON_CODE["lost"]
    )
    d_total = (raw["mon"] * keep).sum(axis=1)
    t_flat = np.broadcast_to(tgrid, (n, K + 1))[keep]
    return Cohort(
        subject_ids=[f"s{i:07d}" for i in range(n)],
        baseline=_baseline_values(draws, raw["base_marker"]),
        schema=SIM_SCHEMA,
        horizon=K,
        followup_end=fue,
        end_reason=reason,
        outcome_y=y,
        d_total=d_total,
        t=t_flat,
        monitor=raw["mon"][keep],
        observed_marker=raw["obs"][keep],
        last_observed_marker=raw["last"][keep],
        months_since=raw["msince"][keep],
        override_flag=raw["ovr"][keep],
        validate=False,
    )


def simulate_cohort(params, n, seed=None):
    """Simulate an observational cohort of ``n`` subjects.

    Identical ``(params, n, seed)`` give a bit-identical cohort; ``seed``
    defaults to ``params.seed``.
    """
    params.validate()
    if n < 1:
        raise ConfigError("n must be at least 1")
    key = (params.seed if seed is None else seed, 0)
    draws = _draws(key, n, params.horizon)
    raw = _run_kernel(params, n, draws, _observational_decision(params))
    return _pack_cohort(params, raw, draws)


def simulate_forced(params, strategy, n, rule="earliest", seed=None):
    """Simulate ``n`` subjects forced to follow one strategy.

    ``rule`` picks the within-window visit time: ``earliest`` monitors the
    first permitted month (gap = lo), ``latest`` the last (gap = hi), and
    ``natural`` draws the visit from the observational law conditioned to
    the permitted window (never before lo, surely at hi). The transition
    kernel is shared with :func:`simulate_cohort`; only the monitoring
    decision differs, so consistency holds mechanically.
    """
    params.validate()
    if n < 1:
        raise ConfigError("n must be at least 1")
    if rule not in FORCED_RULES:
        raise ConfigError(f"unknown forced rule {rule!r}")
    key = (params.seed if seed is None else seed, 1)
    draws = _draws(key, n, params.horizon)
    raw = _run_kernel(params, n, draws, _forced_decision(params, strategy, rule))
    return _pack_cohort(params, raw, draws)


@dataclass
class TruthTable:
    """Oracle counterfactual means per threshold, with Monte Carlo SEs."""

    xs: np.ndarray
    risk: np.ndarray
    risk_mcse: np.ndarray
    usage: np.ndarray
    usage_mcse: np.ndarray
    rule: str
    n_mc: int


def oracle_truth(params, grid, n_mc, rule="earliest", seed=None):
    """Ground-truth counterfactual (risk, usage) per strategy by forced Monte
    Carlo.

    Every subject is forced onto each strategy in turn with the chosen
    within-window visit rule (``earliest``, ``latest``, or ``natural``),
    reusing one set of random draws across thresholds (common random
    numbers). The MC standard error is the per-subject sample sd divided by
    sqrt(n_mc). Loss to follow-up is independent of everything in this
    process, so forced runs disable it rather than discard truncated
    subjects; the counterfactual means are unchanged.
    """
    params.validate()
    if n_mc < 1000:
        raise ConfigError("oracle needs n_mc >= 1000")
    if rule not in ORACLE_RULES:
        raise ConfigError(f"unknown oracle rule {rule!r}")
    key = (params.seed if seed is None else seed, 2)
    xs = grid.xs

    noloss = params.replace(dropout_hazard=0.0)
    draws = _draws(key, n_mc, params.horizon)
    risk = np.empty(len(grid))
    usage = np.empty(len(grid))
    risk_se = np.empty(len(grid))
    usage_se = np.empty(len(grid))
    for j, strat in enumerate(grid):
        raw = _run_kernel(noloss, n_mc, draws,
                          _forced_decision(noloss, strat, rule))
        y = raw["failed"].astype(np.float64)
        d = raw["mon"].sum(axis=1).astype(np.float64)
        risk[j] = y.mean()
        usage[j] = d.mean()
        risk_se[j] = y.std(ddof=1) / np.sqrt(n_mc)
        usage_se[j] = d.std(ddof=1) / np.sqrt(n_mc)
    return TruthTable(xs, risk, risk_se, usage, usage_se, rule, n_mc)


@dataclass
class PositivityAudit:
    """Empirical monitoring frequencies over coarsened history cells."""

    cells: list
    min_cell: int
    bounds: tuple
    ok: bool
    violations: list


def positivity_audit(cohort, marker_quantiles=(0.2, 0.4, 0.6, 0.8),
                     gap_edges=(2, 3, 4, 5, 7, 10, 14), min_cell=50,
                     bounds=(0.01, 0.99)):
    """Check that every well-occupied coarsened history cell has an interior
    empirical monitoring frequency.

    Cells are (marker band x gap band x override) combinations over decision
    months (t >= 1). Cells with fewer than ``min_cell`` person-months are
    reported but not judged.
    """
    prev_last, prev_ovr, gap = cohort.prev_state()
    dec = cohort.decision_rows()
    last_d = prev_last[dec]
    gap_d = gap[dec]
    ovr_d = prev_ovr[dec]
    mon_d = (cohort.monitor[dec] == 1).astype(np.float64)

    edges = np.quantile(last_d, marker_quantiles)
    mk = np.digitize(last_d, edges)
    gp = np.digitize(gap_d, np.asarray(gap_edges))
    n_mk = len(edges) + 1
    n_gp = len(gap_edges) + 1
    cell = (mk * n_gp + gp) * 2 + ovr_d
    n_cells = n_mk * n_gp * 2
    counts = np.bincount(cell, minlength=n_cells)
    hits = np.bincount(cell, weights=mon_d, minlength=n_cells)

    cells, violations = [], []
    lo, hi = bounds
    for c in range(n_cells):
        if counts[c] == 0:
            continue
        freq = hits[c] / counts[c]
        mk_i, rest = divmod(c, n_gp * 2)
        gp_i, ovr_i = divmod(rest, 2)
        rec = {
            "marker_band": int(mk_i), "gap_band": int(gp_i),
            "override": int(ovr_i), "count": int(counts[c]),
            "monitor_freq": float(freq),
        }
        cells.append(rec)
        if counts[c] >= min_cell and not (lo < freq < hi):
            violations.append(rec)
    return PositivityAudit(cells=cells, min_cell=min_cell, bounds=bounds,
                           ok=not violations, violations=violations)
