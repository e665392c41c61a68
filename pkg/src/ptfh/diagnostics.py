"""Model checking: residuals, normality test, marginal AIC, a bootstrap
interval for lambda and a penalized-spline goodness-of-fit model."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial

import numpy as np
from scipy import stats
from scipy.linalg import cho_factor, cho_solve

from .data import AreaData
from .errors import DataError, EstimationError, PTFHError
from . import estimation
from .estimation import FitResult, loglik_normalized, transformed
from .mse_bootstrap import MAX_FAILURE_RATE, bootstrap_sample, refit_bootstrap
from .optimize import grid_then_golden
from .parallel import pmap
from .rng import stream

VAR_FLOOR = 1e-8


def standardized_residuals(data: AreaData, fit: FitResult) -> np.ndarray:
    """``(h(y) - x'beta) / sqrt(A + D)`` on the fitted model's own scale."""
    p = fit.params
    r = transformed(data.y, p.lam, fit.model) - data.X @ p.beta
    return r / np.sqrt(p.A + fit.d_used)


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float


def ks_normal_test(e) -> KsResult:
    """One-sample Kolmogorov-Smirnov test against N(0, 1), asymptotic p-value.

    Estimated parameters are ignored (no Lilliefors correction), so the
    test is approximate for residuals.
    """
    e = np.asarray(e, dtype=float).ravel()
    if e.size < 5:
        raise DataError("the KS test needs at least 5 values")
    if not np.all(np.isfinite(e)):
        raise DataError("residuals must be finite")
    if np.ptp(e) == 0:
        raise DataError("all residuals are equal")
    res = stats.kstest(e, "norm", method="asymp")
    return KsResult(float(res.statistic), float(res.pvalue))


def marginal_aic(data: AreaData, fit: FitResult) -> float:
    """``-2 log f(y) + 2k`` with the fully normalized density of ``y``.

    ``k`` counts ``beta`` and ``A``, plus lambda for PTFH.
    """
    ll = loglik_normalized(data, fit.params, fit.d_used, fit.model)
    return -2.0 * ll + 2.0 * fit.n_params


@dataclass
class LambdaInterval:
    lo: float
    hi: float
    level: float
    lambdas: np.ndarray
    n_failed: int
    valid: bool


def _lambda_replicate(data: AreaData, fit: FitResult, seed: int, refit, b: int) -> float:
    rng = stream(seed, "lambda-ci", b)
    try:
        y_star = bootstrap_sample(data.X, fit.params, fit.d_used, fit.model, rng)
        star = AreaData(list(data.area_id), y_star, data.X, D=fit.d_used)
        if refit is not None:
            res = refit(star)
            return float(res.params.lam if isinstance(res, FitResult) else res)
        res = refit_bootstrap(star, fit)
        if not res.convergence.get("tol_met", True):
            return math.nan
        return float(res.params.lam)
    except (PTFHError, FloatingPointError, np.linalg.LinAlgError):
        return math.nan


def lambda_bootstrap_ci(data: AreaData, fit: FitResult, B: int = 1000, level: float = 0.95,
                        seed: int = 0, threads: int = 1, refit=None) -> LambdaInterval:
    """Percentile interval of lambda over ``B`` parametric-bootstrap refits.

    Bootstrap data are drawn with ``fit.d_used`` as known sampling variances.
    ``refit`` (a test hook) maps bootstrap data to a FitResult or a lambda.
    """
    if fit.model != "ptfh":
        raise ValueError("a lambda interval needs a PTFH fit")
    if B < 1 or not 0 < level < 1:
        raise ValueError("need B >= 1 and 0 < level < 1")
    lams = np.array(pmap(partial(_lambda_replicate, data, fit, seed, refit), range(B), threads))
    ok = lams[np.isfinite(lams)]
    if ok.size == 0:
        raise EstimationError("every bootstrap refit failed")
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(ok, [tail, 1.0 - tail])
    n_failed = int(B - ok.size)
    return LambdaInterval(float(lo), float(hi), level, lams, n_failed,
                          n_failed <= MAX_FAILURE_RATE * B)


@dataclass(frozen=True)
class SplineConfig:
    K: int = 20
    degree: int = 1
    lower_quantile: float = 0.1
    upper_quantile: float = 0.9

    def __post_init__(self) -> None:
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if self.degree not in (1, 2, 3):
            raise ValueError("degree must be 1, 2 or 3")


def spline_knots(w, K: int = 20, lower: float = 0.1, upper: float = 0.9) -> np.ndarray:
    """``K`` equally spaced knots between two sample quantiles of ``w``."""
    lo, hi = np.quantile(np.asarray(w, dtype=float), [lower, upper])
    if not hi > lo:
        raise DataError("knot quantiles coincide; w has too few distinct values")
    return np.linspace(lo, hi, K)


def spline_basis(w, knots, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Polynomial design ``[1, w, ..., w**p]`` and truncated powers ``(w - k)_+**p``."""
    w = np.asarray(w, dtype=float)
    X = np.vander(w, degree + 1, increasing=True)
    Z = np.clip(w[:, None] - np.asarray(knots)[None, :], 0.0, None) ** degree
    return X, Z


@dataclass
class SplineFit:
    beta: np.ndarray
    gamma: np.ndarray
    A: float
    alpha: float
    loglik: float
    knots: np.ndarray
    degree: int
    fitted: np.ndarray
    a_boundary: bool
    alpha_boundary: bool

    def curve(self, w) -> np.ndarray:
        X, Z = spline_basis(w, self.knots, self.degree)
        return X @ self.beta + Z @ self.gamma


def _spline_profile(z, X, Z, D, A: float, alpha: float):
    """GLS ``beta`` and the ML log-likelihood (no constants) at ``(A, alpha)``."""
    V = alpha * (Z @ Z.T)
    V[np.diag_indices_from(V)] += A + D
    c = cho_factor(V, lower=True)
    Vi_X = cho_solve(c, X)
    beta = np.linalg.solve(X.T @ Vi_X, Vi_X.T @ z)
    r = z - X @ beta
    Vi_r = cho_solve(c, r)
    logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
    return beta, Vi_r, -0.5 * logdet - 0.5 * float(r @ Vi_r)


def _log_search(f, upper: float, tol: float) -> tuple[float, float]:
    """Maximize ``f`` over ``[0, upper]``: golden search in log scale plus the exact 0 endpoint."""
    grid = np.linspace(math.log(VAR_FLOOR), math.log(upper), 12)
    res, _ = grid_then_golden(lambda s: f(math.exp(s)), grid, tol)
    best_x, best_f = math.exp(res.x), res.fx
    f0 = f(0.0)
    if f0 >= best_f:
        return 0.0, f0
    return best_x, best_f


def spline_gof_fit(z, w, D, config: SplineConfig | None = None,
                   alpha: float | None = None, tol: float = 1e-4) -> SplineFit:
    """ML fit of the penalized-spline model with random effect and sampling error.

    Marginal covariance ``alpha Z Z' + A I + diag(D)``; ``beta`` is profiled by
    GLS and ``(A, alpha)`` by nested golden-section searches on log scale
    (outer ``alpha``, inner ``A``).  Pass ``alpha`` to hold it fixed.
    """
    cfg = config or SplineConfig()
    z, w, D = (np.asarray(a, dtype=float) for a in (z, w, D))
    if not (z.shape == w.shape == D.shape) or z.ndim != 1:
        raise DataError("z, w and D must be 1-D arrays of equal length")
    if np.any(D <= 0):
        raise DataError("D must be > 0")
    knots = spline_knots(w, cfg.K, cfg.lower_quantile, cfg.upper_quantile)
    X, Z = spline_basis(w, knots, cfg.degree)
    if z.size <= cfg.degree + 1 or np.linalg.matrix_rank(X) < X.shape[1]:
        raise EstimationError("polynomial design is rank deficient")
    scale = max(10.0 * float(np.var(z, ddof=1)), 1e3 * VAR_FLOOR)
    # truncated-power columns can be tiny; scale alpha's range to the basis
    zz = float(np.max(np.sum(Z * Z, axis=0))) or 1.0
    alpha_upper = scale * z.size / zz

    def inner(al: float) -> tuple[float, float]:
        return _log_search(lambda A: _spline_profile(z, X, Z, D, A, al)[2], scale, tol)

    if alpha is None:
        cache: dict[float, tuple[float, float]] = {}

        def outer(al: float) -> float:
            if al not in cache:
                cache[al] = inner(al)
            return cache[al][1]

        alpha_hat, _ = _log_search(outer, alpha_upper, tol)
        A_hat = cache[alpha_hat][0]
    else:
        if alpha < 0:
            raise ValueError("alpha must be >= 0")
        alpha_hat = float(alpha)
        A_hat = inner(alpha_hat)[0]

    beta, Vi_r, ll = _spline_profile(z, X, Z, D, A_hat, alpha_hat)
    gamma = alpha_hat * (Z.T @ Vi_r)
    return SplineFit(beta, gamma, A_hat, alpha_hat, ll, knots, cfg.degree,
                     X @ beta + Z @ gamma, A_hat <= VAR_FLOOR or A_hat >= scale * (1 - 1e-6),
                     alpha_hat <= VAR_FLOOR or alpha_hat >= alpha_upper * (1 - 1e-6))


def curve_samples(z, w, D, line: tuple[float, float], degrees=(1, 2, 3), n: int = 200,
                  K: int = 20) -> list[dict]:
    """Fitted spline curves on a dense ``w`` grid next to the straight line ``line``."""
    w = np.asarray(w, dtype=float)
    grid = np.linspace(w.min(), w.max(), n)
    curves = {p: spline_gof_fit(z, w, D, SplineConfig(K=K, degree=p)).curve(grid) for p in degrees}
    rows = []
    for k, g in enumerate(grid):
        row = {"w": float(g)}
        row.update({f"spline_p{p}": float(curves[p][k]) for p in degrees})
        row["ptfh"] = float(line[0] + line[1] * g)
        rows.append(row)
    return rows


def fit_models(data: AreaData, lambda_max: float = estimation.DEFAULT_LAMBDA_MAX) -> dict:
    """PTFH, log-FH and FH fits keyed by model name."""
    return {
        "ptfh": estimation.fit(data, lambda_max=lambda_max),
        "logfh": estimation.fit_logfh(data),
        "fh": estimation.fit_fh(data),
    }
