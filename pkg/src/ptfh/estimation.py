"""Maximum-likelihood fitting of the transformed Fay-Herriot model.

For a fixed transform parameter the model is a classical Fay-Herriot model
on ``h(y)``: ``beta`` is profiled out by GLS and ``A`` by a one-dimensional
search.  The transform parameter is then found by a coarse grid followed by
golden-section refinement of the resulting profile likelihood.

``model`` is one of ``"ptfh"`` (lambda estimated), ``"logfh"`` (lambda pinned
at 0) or ``"fh"`` (identity scale, no Jacobian).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import AreaData
from .errors import DataError, DomainError, EstimationError
from ._kernels import gls_concentrated, search_a
from .optimize import grid_then_golden
from .transform import dpt, log_jacobian_term

MODELS = ("ptfh", "logfh", "fh")

A_FLOOR = 1e-8
A_TOL = 1e-8
LAMBDA_TOL = 1e-5
DEFAULT_LAMBDA_MAX = 2.0
DEFAULT_GRID_POINTS = 21
_A_GRID_POINTS = 16


@dataclass(frozen=True)
class ModelParams:
    """``beta``, random-effect variance ``A`` and transform parameter ``lam``.

    ``lam`` is NaN for the identity-scale FH model.
    """

    beta: np.ndarray
    A: float
    lam: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).reshape(-1))


@dataclass
class InnerFit:
    beta: np.ndarray
    A: float
    loglik: float
    a_boundary: bool
    iterations: int


@dataclass
class FitResult:
    params: ModelParams
    loglik: float
    profile: list[tuple[float, float]]
    d_used: np.ndarray
    convergence: dict
    model: str = "ptfh"
    lambda_max: float = DEFAULT_LAMBDA_MAX
    tol: float = LAMBDA_TOL
    grid_points: int = DEFAULT_GRID_POINTS
    extra: dict = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        """Parameter count used by AIC; lambda counts for PTFH."""
        p = self.params.beta.shape[0]
        return p + 2 if self.model == "ptfh" else p + 1


def _check_model(model: str) -> None:
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")


def transformed(y, lam: float, model: str = "ptfh") -> np.ndarray:
    """Response on the modelling scale."""
    if model == "fh":
        return np.asarray(y, dtype=float)
    return np.asarray(dpt(y, 0.0 if model == "logfh" else lam), dtype=float)


def d_from_replicates(replicates, lam: float) -> float | np.ndarray:
    """Sample variance (divisor ``n - 1``) of transformed replicates.

    A 1-D input gives a scalar; an ``(m, k)`` input gives one value per row.
    """
    z = np.asarray(replicates, dtype=float)
    if z.shape[-1] < 2:
        raise DomainError("at least two replicates are needed")
    d = np.var(np.asarray(dpt(z, lam)), axis=-1, ddof=1)
    if np.any(d <= 0):
        raise DataError("replicates have zero variance on the transformed scale")
    return float(d) if z.ndim == 1 else d


def resolve_d(data: AreaData, lam: float, model: str = "ptfh") -> np.ndarray:
    """Sampling variances to use at ``lam``: given, or computed from replicates."""
    if data.D is not None:
        return data.D
    if data.Z is None:
        raise DataError("sampling variances are unresolved")
    if model == "fh":
        d = np.var(data.Z, axis=1, ddof=1)
        if np.any(d <= 0):
            raise DataError("replicates have zero variance")
        return d
    return d_from_replicates(data.Z, 0.0 if model == "logfh" else lam)


def _jacobian(y: np.ndarray, lam: float, model: str) -> float:
    if model == "fh":
        return 0.0
    return 2.0 * float(np.sum(log_jacobian_term(y, 0.0 if model == "logfh" else lam)))


def loglik(data: AreaData, params: ModelParams, d=None, model: str = "ptfh") -> float:
    """Log-likelihood in the printed form (no 1/2 factors or 2*pi constants).

    ``-sum log(A+D) - sum r**2/(A+D) + 2 sum log(y**(lam-1) + y**(-lam-1))``.
    Use :func:`loglik_normalized` for a proper log-density of ``y``.
    """
    _check_model(model)
    d = resolve_d(data, params.lam, model) if d is None else np.asarray(d, dtype=float)
    h = transformed(data.y, params.lam, model)
    if not np.all(np.isfinite(h)):
        raise DomainError("non-finite transformed response")
    v = params.A + d
    if np.any(v <= 0):
        raise DomainError("A + D must be positive")
    r = h - data.X @ params.beta
    return float(-np.sum(np.log(v)) - np.sum(r * r / v) + _jacobian(data.y, params.lam, model))


def loglik_normalized(data: AreaData, params: ModelParams, d=None, model: str = "ptfh") -> float:
    """Log marginal density of the original-scale ``y`` including all constants."""
    m = data.m
    value = 0.5 * loglik(data, params, d, model) - 0.5 * m * math.log(2.0 * math.pi)
    if model != "fh":
        # Jacobian of the transform is (y**(lam-1) + y**(-lam-1)) / 2
        value -= m * math.log(2.0)
    return value


def _check_design(X: np.ndarray) -> None:
    m, p = X.shape
    if m <= p:
        raise EstimationError(f"need more areas than covariates (m={m}, p={p})")
    if np.linalg.matrix_rank(X) < p:
        raise EstimationError("design matrix is rank deficient")


def _gls(h: np.ndarray, X: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, float]:
    """GLS coefficients and the concentrated likelihood at variances ``v``."""
    beta = np.zeros(X.shape[1])
    ll = gls_concentrated(np.ascontiguousarray(h, dtype=float), np.ascontiguousarray(X, dtype=float),
                          np.ascontiguousarray(v, dtype=float), beta)
    return beta, float(ll)


def gls_beta(h, X, v) -> np.ndarray:
    """``(X' V^-1 X)^-1 X' V^-1 h`` for diagonal ``V = diag(v)``."""
    return _gls(np.asarray(h, float), np.asarray(X, float), np.asarray(v, float))[0]


def a_upper(h: np.ndarray) -> float:
    return max(10.0 * float(np.var(h, ddof=1)), 1e3 * A_FLOOR)


def fit_given_lambda(data: AreaData, lam: float, d=None, model: str = "ptfh",
                     a_tol: float = A_TOL) -> InnerFit:
    """Profile out ``beta`` (GLS) and ``A`` (grid + golden section) at fixed ``lam``."""
    _check_model(model)
    d = resolve_d(data, lam, model) if d is None else np.asarray(d, dtype=float)
    h = transformed(data.y, lam, model)
    X = data.X
    jac = _jacobian(data.y, lam, model)
    a_max = a_upper(h)

    grid = np.concatenate([[A_FLOOR], np.geomspace(max(a_max * 1e-6, 10 * A_FLOOR), a_max,
                                                   _A_GRID_POINTS - 1)])
    X = np.ascontiguousarray(X)
    d = np.ascontiguousarray(d, dtype=float)
    A, _, iterations, _ = search_a(h, X, d, grid, a_tol, 200)
    A = float(A)
    beta, ll = _gls(h, X, A + d)
    at_floor = A - A_FLOOR < 2 * a_tol
    at_top = a_max - A < 2 * a_tol
    return InnerFit(beta=beta, A=A, loglik=ll + jac, a_boundary=bool(at_floor or at_top),
                    iterations=int(iterations))


def fit(data: AreaData, lambda_max: float = DEFAULT_LAMBDA_MAX, tol: float = LAMBDA_TOL,
        grid_points: int = DEFAULT_GRID_POINTS, model: str = "ptfh",
        bracket: tuple[float, float] | None = None) -> FitResult:
    """Maximum-likelihood fit.

    The transform parameter is searched on ``[0, lambda_max]`` (or on
    ``bracket`` when given, falling back to the full range if the optimum
    lands on an interior edge of the bracket).  With replicates, the sampling
    variances are recomputed at every trial value of lambda.
    """
    _check_model(model)
    _check_design(data.X)
    if lambda_max < 0:
        raise ValueError("lambda_max must be >= 0")

    if model == "fh":
        inner = fit_given_lambda(data, math.nan, model="fh")
        params = ModelParams(inner.beta, inner.A, math.nan)
        d_used = resolve_d(data, math.nan, "fh")
        return FitResult(params, loglik(data, params, d_used, "fh"), [], d_used,
                         {"iterations": inner.iterations, "tol_met": True,
                          "a_boundary": inner.a_boundary, "lambda_boundary": None},
                         model="fh", lambda_max=math.nan, tol=tol, grid_points=grid_points)

    if model == "logfh":
        lambda_max = 0.0

    cache: dict[float, InnerFit] = {}
    trace: list[tuple[float, float]] = []

    def profile(lam: float) -> float:
        lam = float(lam)
        if lam not in cache:
            cache[lam] = fit_given_lambda(data, lam, model=model)
            trace.append((lam, cache[lam].loglik))
        return cache[lam].loglik

    def search(lo: float, hi: float):
        n = grid_points if hi > lo else 1
        return grid_then_golden(profile, np.linspace(lo, hi, n), tol)[0]

    fallback = False
    if bracket is not None and lambda_max > 0:
        lo, hi = max(0.0, bracket[0]), min(lambda_max, bracket[1])
        res = search(lo, hi)
        edge = (res.x - lo < tol and lo > 0) or (hi - res.x < tol and hi < lambda_max)
        if edge:
            fallback = True
            res = search(0.0, lambda_max)
    else:
        res = search(0.0, lambda_max)

    lam_hat = float(res.x)
    inner = cache[lam_hat]
    params = ModelParams(inner.beta, inner.A, lam_hat)
    d_used = np.array(resolve_d(data, lam_hat, model), dtype=float)
    boundary = None
    if lambda_max > 0 and lam_hat < tol:
        boundary = "lower"
    elif lambda_max > 0 and lambda_max - lam_hat < tol:
        boundary = "upper"
    convergence = {
        "iterations": res.iterations,
        "tol_met": bool(res.converged),
        "a_boundary": inner.a_boundary,
        "lambda_boundary": boundary,
        "fallback": fallback,
    }
    return FitResult(params, loglik(data, params, d_used, model), sorted(trace), d_used,
                     convergence, model=model, lambda_max=lambda_max, tol=tol,
                     grid_points=grid_points)


def fit_logfh(data: AreaData, **kwargs) -> FitResult:
    """Log-transformed Fay-Herriot fit (lambda pinned at 0)."""
    return fit(data, model="logfh", **kwargs)


def fit_fh(data: AreaData, **kwargs) -> FitResult:
    """Classical Fay-Herriot fit on the original scale."""
    return fit(data, model="fh", **kwargs)
