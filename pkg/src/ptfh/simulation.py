"""Simulation studies: prediction error of competing predictors and calibration
of the bootstrap MSE estimator.

Every replicate draws from its own keyed random stream, so results are the
same whatever order (or number of processes) replicates are run in.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import Callable

import numpy as np

from .data import AreaData
from .errors import PTFHError
from . import estimation
from .mse_bootstrap import MseSettings, bootstrap_mse
from .parallel import pmap
from .prediction import predict_arrays
from .rng import DEFAULT_SEED, stream
from .transform import dpt_inv

PRED_METHODS = ("PTFH-t", "PTFH", "log-FH", "FH")
EFFECT_DISTS = ("normal", "t5_scaled")
D_PATTERNS = {
    "a": (0.3, 0.4, 0.5, 0.6, 0.7),
    "b": (0.2, 0.4, 0.5, 0.6, 2.0),
    "c": (0.1, 0.4, 0.5, 0.6, 4.0),
}
SCALES = {
    "desk": {"R": 1000, "R1": 2000, "R2": 200},
    "full": {"R": 10000, "R1": 5000, "R2": 2000},
}


def _check_design(m: int, D_pattern) -> None:
    if len(D_pattern) == 0 or any(d <= 0 for d in D_pattern):
        raise ValueError("D_pattern entries must be > 0")
    if m % len(D_pattern):
        raise ValueError("m must be divisible by the number of groups")


@dataclass(frozen=True)
class PredStudyConfig:
    m: int = 30
    D_pattern: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8, 1.0)
    beta0: float = 1.0
    beta1: float = 1.0
    A: float = 1.5
    lam: float = 1.0
    effect_dist: str = "normal"
    R: int = 1000
    n_aux: int = 10
    seed: int = DEFAULT_SEED
    lambda_max: float = estimation.DEFAULT_LAMBDA_MAX
    quad_order: int = 50

    def __post_init__(self) -> None:
        object.__setattr__(self, "D_pattern", tuple(float(d) for d in self.D_pattern))
        _check_design(self.m, self.D_pattern)
        if self.effect_dist not in EFFECT_DISTS:
            raise ValueError(f"effect_dist must be one of {EFFECT_DISTS}")
        if self.R < 1 or self.n_aux < 2:
            raise ValueError("need R >= 1 and n_aux >= 2")

    @property
    def groups(self) -> int:
        return len(self.D_pattern)

    @property
    def D(self) -> np.ndarray:
        return np.repeat(self.D_pattern, self.m // self.groups)

    def covariates(self) -> np.ndarray:
        """Drawn once from the study seed and held fixed across replicates."""
        return stream(self.seed, "covariates").uniform(0.0, 4.0, self.m)


@dataclass
class PredSample:
    data: AreaData
    mu: np.ndarray
    D: np.ndarray
    v: np.ndarray


def draw_effects(rng: np.random.Generator, A: float, n, dist: str = "normal") -> np.ndarray:
    """Random effects with variance ``A``; Student t(5) is rescaled by sqrt(3/5)."""
    if dist == "normal":
        return rng.normal(0.0, math.sqrt(A), n)
    return rng.standard_t(5, n) * math.sqrt(3.0 * A / 5.0)


def gen_pred_data(config: PredStudyConfig, r: int, noiseless: bool = False) -> PredSample:
    """Replicate ``r`` of the prediction study.

    The returned data carry auxiliary replicates; ``noiseless`` zeroes the
    random effects and sampling errors (a test hook).
    """
    rng = stream(config.seed, "pred", r)
    x = config.covariates()
    D = config.D
    v = draw_effects(rng, config.A, config.m, config.effect_dist)
    eps = rng.normal(0.0, 1.0, config.m) * np.sqrt(D)
    aux = rng.normal(0.0, 1.0, (config.m, config.n_aux)) * np.sqrt(D)[:, None]
    if noiseless:
        v, eps = np.zeros_like(v), np.zeros_like(eps)
    lin = config.beta0 + config.beta1 * x
    y = dpt_inv(lin + v + eps, config.lam)
    Z = dpt_inv(aux, config.lam)
    X = np.column_stack([np.ones(config.m), x])
    ids = [str(i + 1) for i in range(config.m)]
    return PredSample(AreaData(ids, y, X, Z=Z), dpt_inv(lin + v, config.lam), D, v)


def _converged(fit) -> bool:
    return bool(fit.convergence.get("tol_met", True))


def _method_predictions(sample: PredSample, config: PredStudyConfig) -> dict[str, np.ndarray]:
    data, out = sample.data, {}
    kw = {"lambda_max": config.lambda_max}
    arms = {
        "PTFH-t": (data.with_D(sample.D), "ptfh"),
        "PTFH": (data, "ptfh"),
        "log-FH": (data, "logfh"),
        "FH": (data, "fh"),
    }
    for name, (d, model) in arms.items():
        try:
            fit = estimation.fit(d, model=model, **kw)
            if not _converged(fit):
                raise PTFHError("search did not converge")
            out[name] = predict_arrays(d.y, d.X, fit.params, fit.d_used, model,
                                       config.quad_order)[3]
        except (PTFHError, FloatingPointError, np.linalg.LinAlgError):
            out[name] = np.full(data.m, np.nan)
    return out


def _pred_replicate(config: PredStudyConfig, methods, r: int) -> np.ndarray:
    sample = gen_pred_data(config, r)
    if methods is None:
        preds = _method_predictions(sample, config)
    else:
        preds = {name: np.asarray(fn(sample), dtype=float) for name, fn in methods.items()}
    return np.stack([(preds[k] - sample.mu) / sample.mu for k in preds])


def group_means(values: np.ndarray, groups: int) -> np.ndarray:
    """Mean over equal-sized consecutive area groups along the last axis."""
    values = np.asarray(values, dtype=float)
    return values.reshape(*values.shape[:-1], groups, -1).mean(axis=-1)


def group_summary(values: np.ndarray, groups: int) -> dict[str, np.ndarray]:
    v = np.asarray(values, dtype=float)
    g = v.reshape(*v.shape[:-1], groups, -1)
    return {"max": g.max(axis=-1), "mean": g.mean(axis=-1), "min": g.min(axis=-1)}


@dataclass
class PredStudyResult:
    config: PredStudyConfig
    methods: tuple[str, ...]
    rel_errors: np.ndarray  # (R, methods, m); NaN marks an excluded fit
    failures: dict[str, int]

    @property
    def cv(self) -> np.ndarray:
        """Per-area percent CV, shape ``(methods, m)``."""
        return 100.0 * np.sqrt(np.nanmean(self.rel_errors**2, axis=0))

    @property
    def arb(self) -> np.ndarray:
        return 100.0 * np.abs(np.nanmean(self.rel_errors, axis=0))

    def table(self) -> list[dict]:
        """One row per method and metric, one column per group."""
        rows = []
        for metric, vals in (("CV", self.cv), ("ARB", self.arb)):
            gm = group_means(vals, self.config.groups)
            for k, name in enumerate(self.methods):
                row = {"metric": metric, "method": name}
                row.update({f"G{g + 1}": float(gm[k, g]) for g in range(self.config.groups)})
                rows.append(row)
        return rows

    def error_rows(self) -> list[dict]:
        R, _, m = self.rel_errors.shape
        return [{"replicate": r, "method": name, "area": i + 1,
                 "rel_error": float(self.rel_errors[r, k, i])}
                for r in range(R) for k, name in enumerate(self.methods) for i in range(m)]


def run_pred_study(config: PredStudyConfig, threads: int = 1,
                   methods: dict[str, Callable[[PredSample], np.ndarray]] | None = None
                   ) -> PredStudyResult:
    """Relative prediction errors for each method over ``config.R`` replicates.

    ``methods`` maps names to predictors of ``mu`` from a :class:`PredSample`
    and replaces the four standard arms (used for testing).
    """
    names = PRED_METHODS if methods is None else tuple(methods)
    errs = np.stack(pmap(partial(_pred_replicate, config, methods), range(config.R), threads))
    failed = np.isnan(errs).any(axis=2).sum(axis=0)
    return PredStudyResult(config, names, errs, {n: int(f) for n, f in zip(names, failed)})


@dataclass(frozen=True)
class MseStudyConfig:
    m: int = 30
    mu: float = 0.0
    A: float = 1.0
    lam: float = 0.2
    pattern: str = "a"
    R1: int = 2000
    R2: int = 200
    B: int = 100
    S: int = 10000
    known_D: bool = True
    n_aux: int = 10
    correction: str = "additive"
    seed: int = DEFAULT_SEED
    lambda_max: float = estimation.DEFAULT_LAMBDA_MAX
    quad_order: int = 50

    def __post_init__(self) -> None:
        if self.pattern not in D_PATTERNS:
            raise ValueError(f"pattern must be one of {tuple(D_PATTERNS)}")
        _check_design(self.m, D_PATTERNS[self.pattern])
        if self.R1 < 1 or self.R2 < 1:
            raise ValueError("R1 and R2 must be >= 1")

    @property
    def groups(self) -> int:
        return len(D_PATTERNS[self.pattern])

    @property
    def D(self) -> np.ndarray:
        pat = D_PATTERNS[self.pattern]
        return np.repeat(pat, self.m // len(pat))


def gen_mse_data(config: MseStudyConfig, key: str, r: int) -> tuple[AreaData, np.ndarray]:
    """Intercept-only data and true area means for replicate ``r`` of stream ``key``."""
    rng = stream(config.seed, key, r)
    D = config.D
    v = rng.normal(0.0, math.sqrt(config.A), config.m)
    eps = rng.normal(0.0, 1.0, config.m) * np.sqrt(D)
    y = dpt_inv(config.mu + v + eps, config.lam)
    ids = [str(i + 1) for i in range(config.m)]
    X = np.ones((config.m, 1))
    if config.known_D:
        data = AreaData(ids, y, X, D=D)
    else:
        aux = rng.normal(0.0, 1.0, (config.m, config.n_aux)) * np.sqrt(D)[:, None]
        data = AreaData(ids, y, X, Z=dpt_inv(aux, config.lam))
    return data, dpt_inv(config.mu + v, config.lam)


def _fit(data: AreaData, config: MseStudyConfig):
    fit = estimation.fit(data, lambda_max=config.lambda_max)
    if not _converged(fit):
        raise PTFHError("search did not converge")
    return fit


def _truth_replicate(config: MseStudyConfig, r: int) -> np.ndarray:
    data, mu = gen_mse_data(config, "mse-truth", r)
    try:
        fit = _fit(data, config)
        mu_hat = predict_arrays(data.y, data.X, fit.params, fit.d_used, "ptfh",
                                config.quad_order)[3]
    except (PTFHError, FloatingPointError, np.linalg.LinAlgError):
        return np.full(config.m, np.nan)
    return (mu_hat - mu) ** 2


def simulate_true_mse(config: MseStudyConfig, threads: int = 1) -> np.ndarray:
    """Monte-Carlo MSE of the EBP over ``config.R1`` replicates."""
    sq = np.stack(pmap(partial(_truth_replicate, config), range(config.R1), threads))
    return np.nanmean(sq, axis=0)


def _boot_seed(config: MseStudyConfig, r: int) -> int:
    return int(stream(config.seed, "mse-boot", r).integers(0, 2**63))


def _estimate_replicate(config: MseStudyConfig, estimator, r: int):
    data, _ = gen_mse_data(config, "mse-est", r)
    try:
        fit = _fit(data, config)
        if estimator is not None:
            est = np.asarray(estimator(data, fit), dtype=float)
            return est, est
        # with estimated D the bootstrap treats D(lambda_hat) as known
        settings = MseSettings(B=config.B, S=config.S, seed=_boot_seed(config, r),
                               correction=config.correction, quad_order=config.quad_order)
        rep = bootstrap_mse(data.with_D(fit.d_used) if data.D is None else data, fit, settings)
        if not rep.valid:
            raise PTFHError("too many bootstrap refits failed")
    except (PTFHError, FloatingPointError, np.linalg.LinAlgError):
        nan = np.full(config.m, np.nan)
        return nan, nan
    return rep.mse_total, rep.mse_naive


def _rb_cv(est: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dev = est - truth
    return (100.0 * np.nanmean(dev, axis=0) / truth,
            100.0 * np.sqrt(np.nanmean(dev**2, axis=0)) / truth)


@dataclass
class MseStudyResult:
    config: MseStudyConfig
    true_mse: np.ndarray
    estimates: np.ndarray  # (R2, m) corrected estimator
    naive: np.ndarray  # (R2, m) plug-in g1(phi_hat) + g2*
    failures: int
    rb: np.ndarray = field(init=False)
    cv: np.ndarray = field(init=False)
    rb_naive: np.ndarray = field(init=False)
    cv_naive: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.rb, self.cv = _rb_cv(self.estimates, self.true_mse)
        self.rb_naive, self.cv_naive = _rb_cv(self.naive, self.true_mse)

    def table(self) -> list[dict]:
        """Rows ``(estimator, metric, stat)`` with one column per group."""
        rows = []
        G = self.config.groups
        for est_name, rb, cv in (("corrected", self.rb, self.cv),
                                 ("naive", self.rb_naive, self.cv_naive)):
            for metric, vals in (("RB", rb), ("CV", cv)):
                summary = group_summary(vals, G)
                for stat in ("max", "mean", "min"):
                    row = {"estimator": est_name, "metric": metric, "stat": stat}
                    row.update({f"G{g + 1}": float(summary[stat][g]) for g in range(G)})
                    rows.append(row)
        return rows


def run_mse_study(config: MseStudyConfig, threads: int = 1, estimator=None,
                  true_mse: np.ndarray | None = None) -> MseStudyResult:
    """RB and CV of the bootstrap MSE estimator against a simulated true MSE.

    ``estimator(data, fit)`` replaces the bootstrap estimator and
    ``true_mse`` skips the R1 truth runs; both are test hooks.
    """
    truth = simulate_true_mse(config, threads) if true_mse is None else np.asarray(true_mse, float)
    out = pmap(partial(_estimate_replicate, config, estimator), range(config.R2), threads)
    est = np.stack([o[0] for o in out])
    naive = np.stack([o[1] for o in out])
    failures = int(np.isnan(est).any(axis=1).sum())
    return MseStudyResult(config, truth, est, naive, failures)


def config_dict(config) -> dict:
    d = asdict(config)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
