"""Parametric-bootstrap MSE estimation for the empirical best predictor.

The leading term ``g1`` is evaluated by Monte Carlo through the identity

    g1 = E[ f(xb + z1)**2 - f(xb + c1 z1 + c2 z2) f(xb + c1 z1 - c2 z2) ]

with ``f`` the inverse transform, ``z1, z2 ~ N(0, A)``, ``a = A / (A + D)``,
``c1 = sqrt((1 + a) / 2)`` and ``c2 = sqrt((1 - a) / 2)``.  All ``g1``
evaluations inside one report share the same standard-normal draws, so the
bootstrap bias correction ``2 g1(phi) - mean_b g1(phi*_b)`` is a difference of
smoothly coupled quantities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .data import AreaData
from .errors import EstimationError, PTFHError, TransformOverflowError
from . import estimation
from .estimation import FitResult, ModelParams
from .parallel import pmap
from .prediction import DEFAULT_QUAD_ORDER, predict_arrays
from .rng import stream
from .transform import dpt_inv

CORRECTIONS = ("additive", "multiplicative")
NARROW_HALF_WIDTH = 0.5
MAX_FAILURE_RATE = 0.10


@dataclass(frozen=True)
class MseSettings:
    B: int = 100
    S: int = 10000
    seed: int = 0
    correction: str = "additive"
    clamp_negative: bool = False
    quad_order: int = DEFAULT_QUAD_ORDER
    narrow_refits: bool = True

    def __post_init__(self) -> None:
        if self.B < 1:
            raise ValueError("B must be >= 1")
        if self.S < 1000:
            raise ValueError("S must be >= 1000")
        if self.correction not in CORRECTIONS:
            raise ValueError(f"correction must be one of {CORRECTIONS}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class MseReport:
    area_id: list[str]
    mu_hat: np.ndarray
    g1_plugin: np.ndarray
    g1_plugin_se: np.ndarray
    g1_boot_mean: np.ndarray
    g1_corrected: np.ndarray
    g2_star: np.ndarray
    mse_raw: np.ndarray
    mse_total: np.ndarray
    mse_clamped_flag: np.ndarray
    settings: MseSettings
    n_failed: int
    valid: bool
    g1_replicates: np.ndarray = field(repr=False)
    g2_replicates: np.ndarray = field(repr=False)
    params_star: list[ModelParams] = field(repr=False)

    @property
    def lambda_star(self) -> np.ndarray:
        return np.array([p.lam for p in self.params_star])

    @property
    def mse_naive(self) -> np.ndarray:
        """Plug-in ``g1(phi_hat) + g2*`` without the bias correction."""
        return self.g1_plugin + self.g2_star

    @property
    def rmse(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.mse_total, 0.0))


def _inverse(model: str, lam: float):
    if model == "fh":
        return lambda t: np.asarray(t, dtype=float)
    lam = 0.0 if model == "logfh" else lam
    return lambda t: np.asarray(dpt_inv(t, lam), dtype=float)


def g1_normals(seed: int, m: int, S: int) -> np.ndarray:
    """Common standard-normal draws, one keyed stream per area: shape ``(m, S, 2)``."""
    return np.stack([stream(seed, "g1", i).standard_normal((S, 2)) for i in range(m)])


def g1_mc_many(xb, A: float, D, lam: float, normals: np.ndarray,
               model: str = "ptfh") -> tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo ``g1`` and its standard error for every area at once.

    ``normals`` has shape ``(m, S, 2)`` (or ``(S, 2)`` shared by all areas).
    """
    xb = np.atleast_1d(np.asarray(xb, dtype=float))
    D = np.broadcast_to(np.asarray(D, dtype=float), xb.shape)
    if A < 0:
        raise ValueError("A must be >= 0")
    if np.any(D <= 0):
        raise ValueError("D must be > 0")
    if A == 0.0:
        return np.zeros(xb.shape), np.zeros(xb.shape)
    normals = np.asarray(normals, dtype=float)
    if normals.ndim == 2:
        normals = np.broadcast_to(normals, (xb.shape[0], *normals.shape))
    S = normals.shape[1]
    f = _inverse(model, lam)
    a = (A / (A + D))[:, None]
    c1, c2 = np.sqrt((1.0 + a) / 2.0), np.sqrt((1.0 - a) / 2.0)
    z1 = math.sqrt(A) * normals[:, :, 0]
    z2 = math.sqrt(A) * normals[:, :, 1]
    base = xb[:, None]
    try:
        mu = f(base + z1)
        s = f(base + c1 * z1 + c2 * z2)
        t = f(base + c1 * z1 - c2 * z2)
    except TransformOverflowError as exc:
        area, draw = divmod(exc.index or 0, S)
        raise TransformOverflowError(f"g1 draw {draw} of area {area} overflows: {exc}",
                                     index=exc.index) from exc
    terms = mu * mu - s * t
    return terms.mean(axis=1), terms.std(axis=1, ddof=1) / math.sqrt(S)


def g1_mc(params: ModelParams, x, D: float, S: int = 10000, rng=None,
          model: str = "ptfh") -> tuple[float, float]:
    """``g1`` for a single area; ``rng`` is a Generator or an ``(S, 2)`` draw array."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] == params.beta.shape[0] - 1:
        x = np.concatenate([[1.0], x])
    if rng is None:
        rng = np.random.default_rng()
    normals = rng if isinstance(rng, np.ndarray) else rng.standard_normal((S, 2))
    g, se = g1_mc_many(np.array([x @ params.beta]), params.A, np.array([D]), params.lam,
                       normals[None, :, :], model)
    return float(g[0]), float(se[0])


@dataclass
class _BootContext:
    data: AreaData
    fit: FitResult
    settings: MseSettings
    normals: np.ndarray
    mu_hat: np.ndarray
    refit: object = None


def bootstrap_sample(X: np.ndarray, params: ModelParams, D: np.ndarray, model: str,
                     rng: np.random.Generator) -> np.ndarray:
    """One draw of ``y*`` from the fitted model."""
    m = X.shape[0]
    v = rng.normal(0.0, math.sqrt(params.A), m)
    e = rng.normal(0.0, 1.0, m) * np.sqrt(D)
    return _inverse(model, params.lam)(X @ params.beta + v + e)


def refit_bootstrap(data_star: AreaData, base: FitResult, narrow: bool = True) -> FitResult:
    """Refit on bootstrap data with the original search settings.

    With ``narrow`` the lambda grid is restricted to ``lambda_hat +- 0.5``
    (same grid spacing); :func:`ptfh.estimation.fit` widens it again if the
    optimum lands on an interior edge.
    """
    if base.model != "ptfh" or not narrow or base.lambda_max == 0:
        return estimation.fit(data_star, lambda_max=base.lambda_max, tol=base.tol,
                              grid_points=base.grid_points, model=base.model)
    lam = base.params.lam
    lo, hi = max(0.0, lam - NARROW_HALF_WIDTH), min(base.lambda_max, lam + NARROW_HALF_WIDTH)
    spacing = base.lambda_max / max(base.grid_points - 1, 1)
    n = max(3, int(round((hi - lo) / spacing)) + 1)
    return estimation.fit(data_star, lambda_max=base.lambda_max, tol=base.tol, grid_points=n,
                          model=base.model, bracket=(lo, hi))


def _replicate(ctx: _BootContext, b: int):
    fit0, st = ctx.fit, ctx.settings
    X, d = ctx.data.X, fit0.d_used
    rng = stream(st.seed, "boot", b)
    try:
        y_star = bootstrap_sample(X, fit0.params, d, fit0.model, rng)
        data_star = AreaData(list(ctx.data.area_id), y_star, X, D=d,
                             require_positive=fit0.model != "fh")
        if ctx.refit is not None:
            res = ctx.refit(data_star)
            params = res.params if isinstance(res, FitResult) else res
        else:
            params = refit_bootstrap(data_star, fit0, st.narrow_refits).params
        g1, _ = g1_mc_many(X @ params.beta, params.A, d, params.lam, ctx.normals, fit0.model)
        mu_star = predict_arrays(ctx.data.y, X, params, d, fit0.model, st.quad_order)[3]
    except (PTFHError, FloatingPointError, np.linalg.LinAlgError):
        return None
    if not (np.all(np.isfinite(g1)) and np.all(np.isfinite(mu_star))):
        return None
    return g1, (mu_star - ctx.mu_hat) ** 2, params


def bootstrap_mse(data: AreaData, fit: FitResult, settings: MseSettings | None = None,
                  refit=None, threads: int = 1) -> MseReport:
    """Second-order unbiased MSE estimates of the EBP for every area.

    ``refit`` replaces the bootstrap re-estimation (it receives the bootstrap
    :class:`AreaData` and returns a FitResult or ModelParams); intended as a
    test hook.  Output is identical for any ``threads``.
    """
    st = settings or MseSettings()
    if fit.model == "ptfh" and not fit.convergence.get("tol_met", True):
        raise EstimationError("the supplied fit did not converge")
    X, d, params = data.X, fit.d_used, fit.params
    normals = g1_normals(st.seed, data.m, st.S)
    g1_hat, g1_se = g1_mc_many(X @ params.beta, params.A, d, params.lam, normals, fit.model)
    mu_hat = predict_arrays(data.y, X, params, d, fit.model, st.quad_order)[3]

    ctx = _BootContext(data, fit, st, normals, mu_hat, refit)
    results = pmap(partial(_replicate, ctx), range(st.B), threads)
    ok = [r for r in results if r is not None]
    n_failed = st.B - len(ok)
    if not ok:
        raise EstimationError("every bootstrap refit failed")
    g1_star = np.array([r[0] for r in ok])
    g2_rep = np.array([r[1] for r in ok])

    g1_boot = g1_star.mean(axis=0)
    if st.correction == "additive":
        g1_corr = 2.0 * g1_hat - g1_boot
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            g1_corr = np.where(g1_boot > 0, g1_hat**2 / g1_boot, 0.0)
    g2 = g2_rep.mean(axis=0)
    mse_raw = g1_corr + g2
    negative = mse_raw < 0
    mse_total = np.where(negative & st.clamp_negative, g2, mse_raw)
    return MseReport(
        area_id=list(data.area_id), mu_hat=mu_hat, g1_plugin=g1_hat, g1_plugin_se=g1_se,
        g1_boot_mean=g1_boot, g1_corrected=g1_corr, g2_star=g2, mse_raw=mse_raw,
        mse_total=mse_total, mse_clamped_flag=negative, settings=st, n_failed=n_failed,
        valid=n_failed <= MAX_FAILURE_RATE * st.B, g1_replicates=g1_star,
        g2_replicates=g2_rep, params_star=[r[2] for r in ok],
    )
