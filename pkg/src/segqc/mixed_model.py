"""Random-intercept linear mixed model fitted by profiled REML.

The model is ``y = X beta + b_g + eps`` with one intercept per group,
``b ~ N(0, sigma_b^2)`` and ``eps ~ N(0, sigma_e^2)``. With the variance
ratio ``lambda = sigma_b^2 / sigma_e^2`` fixed, beta has the GLS closed
form and sigma_e^2 profiles out, leaving a one-dimensional REML criterion.
That criterion is maximised by golden-section search over
``log10(lambda)`` in [-6, 6] (interval width 1e-8), then polished by
bisecting the analytic score; a maximiser at either end of the range is
reported as-is, not treated as an error.

Because groups only enter through ``V = I + lambda * Z Z^T`` and Z is a
group-indicator matrix, V is block diagonal and every quantity reduces to
per-group sums: no n-by-n matrix is ever formed.

The reported test is a Wald z for the last coefficient (the condition
effect when ``x`` is given, the intercept otherwise) against a standard
normal reference; p = 2 * (1 - Phi(|z|)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDesignError, DomainError

LOG10_LAMBDA_RANGE = (-6.0, 6.0)
_GOLDEN_TOL = 1e-8
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class MixedModelFit:
    beta: tuple[float, ...]
    sigma_b2: float
    sigma_e2: float
    reml_log_lik: float
    wald_z: float
    p_value: float
    lambda_ratio: float  # sigma_b2 / sigma_e2


class _Profile:
    """Sufficient statistics for the profiled REML criterion."""

    def __init__(self, X: np.ndarray, y: np.ndarray, group_index: np.ndarray, n_groups: int):
        self.n, self.p = X.shape
        self.XtX = X.T @ X
        self.Xty = X.T @ y
        self.yty = float(y @ y)
        self.group_sizes = np.bincount(group_index, minlength=n_groups).astype(float)
        self.SX = np.column_stack(
            [np.bincount(group_index, weights=X[:, j], minlength=n_groups) for j in range(self.p)]
        )
        self.Sy = np.bincount(group_index, weights=y, minlength=n_groups)

    def evaluate(self, lam: float):
        """REML log-likelihood and GLS quantities at a fixed variance ratio."""
        w = lam / (1.0 + lam * self.group_sizes)
        xtvx = self.XtX - (self.SX * w[:, None]).T @ self.SX
        xtvy = self.Xty - self.SX.T @ (w * self.Sy)
        ytvy = self.yty - float(w @ (self.Sy**2))
        logdet_v = float(np.sum(np.log1p(lam * self.group_sizes)))
        try:
            beta = np.linalg.solve(xtvx, xtvy)
        except np.linalg.LinAlgError:
            raise DegenerateDesignError("X^T V^-1 X is singular")
        rvr = ytvy - 2.0 * float(beta @ xtvy) + float(beta @ xtvx @ beta)
        rvr = max(rvr, 1e-300)
        sign, logdet_xtvx = np.linalg.slogdet(xtvx)
        if sign <= 0:
            raise DegenerateDesignError("X^T V^-1 X is not positive definite")
        dof = self.n - self.p
        sigma_e2 = rvr / dof
        log_lik = -0.5 * (
            dof * math.log(2.0 * math.pi * sigma_e2) + logdet_v + logdet_xtvx + dof
        )
        return log_lik, beta, xtvx, sigma_e2

    def score(self, lam: float) -> float:
        """d(REML log-likelihood)/d(lambda); stable near the optimum.

        Uses the envelope theorem for the residual quadratic form, so only
        per-group sums are needed.
        """
        shrink = 1.0 + lam * self.group_sizes
        w = lam / shrink
        xtvx = self.XtX - (self.SX * w[:, None]).T @ self.SX
        xtvy = self.Xty - self.SX.T @ (w * self.Sy)
        ytvy = self.yty - float(w @ (self.Sy**2))
        beta = np.linalg.solve(xtvx, xtvy)
        rvr = ytvy - 2.0 * float(beta @ xtvy) + float(beta @ xtvx @ beta)
        rvr = max(rvr, 1e-300)
        u = (self.Sy - self.SX @ beta) / shrink  # Z^T V^-1 r per group
        d_rvr = -float(u @ u)
        d_logdet_v = float(np.sum(self.group_sizes / shrink))
        a = self.SX / shrink[:, None]  # Z^T V^-1 X
        d_logdet_xtvx = -float(np.trace(np.linalg.solve(xtvx, a.T @ a)))
        dof = self.n - self.p
        return -0.5 * (dof * d_rvr / rvr + d_logdet_v + d_logdet_xtvx)


def _golden_max(f, lo: float, hi: float, tol: float) -> float:
    a, b = lo, hi
    h = b - a
    c = b - _INVPHI * h
    d = a + _INVPHI * h
    fc = f(c)
    fd = f(d)
    while h > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            h = b - a
            c = b - _INVPHI * h
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            h = b - a
            d = a + _INVPHI * h
            fd = f(d)
    return 0.5 * (a + b)


def _refine_by_score(profile: _Profile, t0: float, lo: float, hi: float) -> float:
    """Polish the golden-section estimate by bisecting the analytic score.

    Round-off makes the likelihood flat to ~sqrt(eps) around its maximum,
    so the argmax alone wobbles far more than the derivative's root does.
    Bisection of the score pins lambda to ~1e-13 in log10, which is what
    makes the fit's shift/scale invariance hold to 1e-9.
    """

    def score_at(t: float) -> float:
        return profile.score(10.0**t)

    if score_at(lo) <= 0.0:
        return lo
    if score_at(hi) >= 0.0:
        return hi
    a, b = lo, hi
    for width in (1e-4, 1e-2, 1.0):
        aa = max(lo, t0 - width)
        bb = min(hi, t0 + width)
        if score_at(aa) > 0.0 and score_at(bb) < 0.0:
            a, b = aa, bb
            break
    while b - a > 1e-13:
        mid = 0.5 * (a + b)
        if score_at(mid) > 0.0:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


def fit_random_intercept(y, group, x=None) -> MixedModelFit:
    """REML fit of a random-intercept model, optionally with a condition term.

    ``y`` are the responses, ``group`` the per-observation group labels
    (any hashable values), ``x`` an optional condition vector giving the
    fixed-effect design [1, x]; without it the model is intercept-only.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise DomainError("y must be a 1-D vector")
    if not np.all(np.isfinite(y)):
        raise DomainError("y contains non-finite values")
    group = np.asarray(group)
    if group.shape != y.shape:
        raise DomainError("group labels must align with y")
    labels, group_index = np.unique(group, return_inverse=True)
    n_groups = len(labels)
    if y.size < 3:
        raise DomainError(f"need at least 3 observations, got {y.size}")
    if n_groups < 2:
        raise DomainError(f"need at least 2 distinct groups, got {n_groups}")

    if x is None:
        X = np.ones((y.size, 1))
    else:
        x = np.asarray(x, dtype=float)
        if x.shape != y.shape:
            raise DomainError("x must align with y")
        if not np.all(np.isfinite(x)):
            raise DomainError("x contains non-finite values")
        if np.ptp(x) == 0.0:
            raise DegenerateDesignError("condition vector x is constant")
        X = np.column_stack([np.ones(y.size), x])

    profile = _Profile(X, y, group_index, n_groups)

    def objective(log10_lam: float) -> float:
        return profile.evaluate(10.0**log10_lam)[0]

    lo, hi = LOG10_LAMBDA_RANGE
    best_t = _golden_max(objective, lo, hi, _GOLDEN_TOL)
    best_t = _refine_by_score(profile, best_t, lo, hi)

    lam = 10.0**best_t
    log_lik, beta, xtvx, sigma_e2 = profile.evaluate(lam)
    cov = sigma_e2 * np.linalg.inv(xtvx)
    k = X.shape[1] - 1
    se = math.sqrt(cov[k, k])
    wald_z = float(beta[k]) / se
    p_value = math.erfc(abs(wald_z) / math.sqrt(2.0))
    return MixedModelFit(
        beta=tuple(float(b) for b in beta),
        sigma_b2=lam * sigma_e2,
        sigma_e2=sigma_e2,
        reml_log_lik=log_lik,
        wald_z=wald_z,
        p_value=p_value,
        lambda_ratio=lam,
    )
