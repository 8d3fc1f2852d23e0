"""Weighted GLM fitting by IRLS and a restricted cubic spline basis.

Two families are supported: binomial with logit link and Poisson with log
link. Case weights multiply the working weights, so bootstrap multiplicities
and inverse-probability weights can be folded into a single weight vector.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln, xlogy

from .errors import ConfigError, NonConvergence, RankError, SchemaError

BINOMIAL_LOGIT = "binomial_logit"
POISSON_LOG = "poisson_log"
FAMILIES = (BINOMIAL_LOGIT, POISSON_LOG)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 50


@dataclass
class DesignMatrix:
    """Dense design matrix with named columns and per-row case weights."""

    X: np.ndarray
    columns: list[str]
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise ConfigError("design matrix must be 2-dimensional")
        n, p = self.X.shape
        if p < 1:
            raise ConfigError("design matrix needs at least one column")
        if len(self.columns) != p:
            raise ConfigError(
                f"{len(self.columns)} column names for {p} columns"
            )
        if not np.all(np.isfinite(self.X)):
            raise ConfigError("design matrix contains non-finite entries")
        if self.weights is None:
            self.weights = np.ones(n)
        else:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape != (n,):
                raise ConfigError("weights must have one entry per row")
            if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
                raise ConfigError("case weights must be finite and >= 0")
        if not np.any(self.weights > 0):
            raise ConfigError("at least one case weight must be positive")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]


@dataclass
class GlmFit:
    """Coefficients and diagnostics from one IRLS fit."""

    coef: np.ndarray
    columns: list[str]
    family: str
    converged: bool
    iterations: int
    deviance: float
    loglik: float
    cond: float
    se: np.ndarray | None = None
    degenerate: bool = False
    history: list = field(default_factory=list, repr=False)


def rcs_basis(values, knots):
    """Restricted (natural) cubic spline basis.

    Returns ``k - 1`` columns for ``k`` knots: the identity (linear) term
    followed by ``k - 2`` nonlinear terms built from truncated cubes and
    scaled by ``(t_last - t_first)**2``. The basis is cubic between knots,
    linear beyond the boundary knots, and has continuous second derivatives;
    the nonlinear columns are exactly zero at or below the first knot.

    Parameters
    ----------
    values : array_like
        Points at which to evaluate the basis.
    knots : array_like
        Strictly increasing knot locations, at least three.
    """
    x = np.asarray(values, dtype=np.float64)
    t = np.asarray(knots, dtype=np.float64)
    k = t.size
    if k < 3:
        raise ConfigError("restricted cubic splines need at least 3 knots")
    if np.any(np.diff(t) <= 0):
        raise ConfigError("knots must be strictly increasing (no duplicates)")

    scale = (t[-1] - t[0]) ** 2
    last_gap = t[-1] - t[-2]

    def cube(u):
        return np.clip(u, 0.0, None) ** 3

    cols = [x]
    for j in range(k - 2):
        term = (
            cube(x - t[j])
            - cube(x - t[-2]) * (t[-1] - t[j]) / last_gap
            + cube(x - t[-1]) * (t[-2] - t[j]) / last_gap
        )
        cols.append(term / scale)
    return np.column_stack(cols)


def _check_response(y, family, n):
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (n,):
        raise ConfigError("response length does not match design")
    if family == BINOMIAL_LOGIT:
        if np.any((y != 0) & (y != 1)):
            raise ConfigError("binomial responses must be 0 or 1")
    elif family == POISSON_LOG:
        if np.any(y < 0) or not np.all(np.isfinite(y)):
            raise ConfigError("poisson responses must be finite and >= 0")
    else:
        raise ConfigError(f"unknown family {family!r}")
    return y


def _mu_eta(eta, family):
    if family == BINOMIAL_LOGIT:
        mu = expit(eta)
        return np.clip(mu, 1e-12, 1 - 1e-12)
    mu = np.exp(np.clip(eta, -300, 300))
    return np.clip(mu, 1e-300, None)


def deviance(y, mu, w, family):
    """Weighted deviance, zero-safe in y."""
    if family == BINOMIAL_LOGIT:
        parts = xlogy(y, y) - xlogy(y, mu) + xlogy(1 - y, 1 - y) - xlogy(1 - y, 1 - mu)
    else:
        parts = xlogy(y, y) - xlogy(y, mu) - (y - mu)
    return float(2.0 * np.sum(w * parts))


def log_likelihood(y, mu, w, family):
    if family == BINOMIAL_LOGIT:
        return float(np.sum(w * (xlogy(y, mu) + xlogy(1 - y, 1 - mu))))
    return float(np.sum(w * (xlogy(y, mu) - mu - gammaln(y + 1.0))))


def score(design, y, coef, family):
    """Weighted score vector X'W(y - mu); ~0 at the MLE."""
    y = _check_response(y, family, design.n)
    eta = design.X @ np.asarray(coef, dtype=np.float64)
    mu = _mu_eta(eta, family)
    return design.X.T @ (design.weights * (y - mu))


def _solve_wls(X, z, wts, columns):
    """Weighted least squares via QR; raises RankError if deficient."""
    sw = np.sqrt(wts)
    A = X * sw[:, None]
    b = z * sw
    Q, R = np.linalg.qr(A, mode="reduced")
    diag = np.abs(np.diag(R))
    dmax = diag.max() if diag.size else 0.0
    if dmax == 0.0 or np.any(diag < 1e-10 * dmax):
        bad = int(np.argmin(diag / (dmax if dmax > 0 else 1.0)))
        raise RankError(
            f"design is rank deficient; column {columns[bad]!r} is linearly "
            "dependent on earlier columns",
            column=columns[bad],
        )
    beta = np.linalg.solve(R, Q.T @ b)
    cond = float(diag.max() / diag.min())
    return beta, cond


def fit_glm(design, response, family, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
            compute_se=True, start=None):
    """Fit a weighted GLM by iteratively reweighted least squares.

    Converges when the largest relative coefficient change drops below
    ``tol``; raises :class:`NonConvergence` (with the coefficient
    trajectory) after ``max_iter`` iterations and :class:`RankError` on a
    rank-deficient design. ``start`` warm-starts the linear predictor from a
    coefficient vector.
    """
    y = _check_response(response, family, design.n)
    X, w = design.X, design.weights
    n, p = X.shape

    if start is not None:
        eta = X @ np.asarray(start, dtype=np.float64)
    else:
        # intercept-style warm start from the weighted mean response
        ybar = float(np.sum(w * y) / np.sum(w))
        if family == BINOMIAL_LOGIT:
            mu0 = np.clip(ybar, 1e-6, 1 - 1e-6)
            eta = np.full(n, np.log(mu0 / (1 - mu0)))
        else:
            eta = np.full(n, np.log(max(ybar, 1e-6)))

    beta = np.zeros(p)
    history = []
    cond = np.nan
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = _mu_eta(eta, family)
        if family == BINOMIAL_LOGIT:
            var = mu * (1 - mu)
        else:
            var = mu
        wk = w * var
        z = eta + (y - mu) / var
        beta_new, cond = _solve_wls(X, z, wk, design.columns)
        delta = np.max(np.abs(beta_new - beta))
        scale_ref = max(1.0, float(np.max(np.abs(beta_new))))
        history.append(beta_new.copy())
        beta = beta_new
        eta = X @ beta
        if delta <= tol * scale_ref:
            converged = True
            break
    if not converged:
        raise NonConvergence(
            f"IRLS did not converge in {max_iter} iterations "
            f"(last step {delta:.3e})",
            trajectory=history,
        )

    mu = _mu_eta(eta, family)
    se = None
    if compute_se:
        if family == BINOMIAL_LOGIT:
            wk = w * mu * (1 - mu)
        else:
            wk = w * mu
        info = (X * wk[:, None]).T @ X
        try:
            se = np.sqrt(np.diag(np.linalg.inv(info)))
        except np.linalg.LinAlgError:
            se = np.full(p, np.nan)

    return GlmFit(
        coef=beta,
        columns=list(design.columns),
        family=family,
        converged=converged,
        iterations=it,
        deviance=deviance(y, mu, w, family),
        loglik=log_likelihood(y, mu, w, family),
        cond=cond,
        se=se,
        history=history,
    )


def predict(fit, design):
    """Mean-scale predictions for a fitted model on a new design."""
    if list(design.columns) != list(fit.columns):
        raise SchemaError(
            f"design columns {design.columns} do not match fitted columns "
            f"{fit.columns}"
        )
    eta = design.X @ fit.coef
    if fit.family == BINOMIAL_LOGIT:
        return expit(eta)
    return np.exp(np.clip(eta, -300, 300))
