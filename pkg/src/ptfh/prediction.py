"""Point prediction of area means on the original scale."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import AreaData
from .errors import DomainError
from .estimation import FitResult, ModelParams, transformed
from .quadrature import gaussian_expectation_inv, gaussian_expectation_inv_many
from .transform import dpt, dpt_inv

DEFAULT_QUAD_ORDER = 50


@dataclass(frozen=True)
class AreaPrediction:
    area_id: str
    theta_hat: float
    gamma: float
    sigma2: float
    mu_hat: float
    mu_naive: float


def _xb(x, beta) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if x.shape[0] == beta.shape[0] - 1:
        x = np.concatenate([[1.0], x])
    if x.shape != beta.shape:
        raise DomainError("covariate vector does not match beta")
    return float(x @ beta)


def shrink(h, xb, A, D):
    """Shrinkage predictor, weight and conditional variance (array-friendly)."""
    h, xb, D = np.asarray(h, float), np.asarray(xb, float), np.asarray(D, float)
    if np.any(~np.isfinite(D)) or np.any(D <= 0):
        raise DomainError("D must be finite and > 0")
    if A < 0:
        raise DomainError("A must be >= 0")
    gamma = A / (A + D)
    theta = gamma * h + (1.0 - gamma) * xb
    sigma2 = A * D / (A + D)
    return theta, gamma, sigma2


def best_theta(y: float, x, params: ModelParams, D: float) -> tuple[float, float, float]:
    """``(theta, gamma, sigma2)`` for one area on the transformed scale.

    ``x`` may include or omit the leading intercept entry.
    """
    theta, gamma, sigma2 = shrink(dpt(y, params.lam), _xb(x, params.beta), params.A, D)
    return float(theta), float(gamma), float(sigma2)


def ebp_mu(y: float, x, params: ModelParams, D: float,
           quad_order: int = DEFAULT_QUAD_ORDER) -> float:
    """Conditional expectation of ``dpt_inv(theta)`` given ``y``."""
    theta, _, sigma2 = best_theta(y, x, params, D)
    return gaussian_expectation_inv(theta, sigma2, params.lam, quad_order)


def naive_mu(y: float, x, params: ModelParams, D: float) -> float:
    """Simple back-transform ``dpt_inv(theta_hat)``; biased, for comparison only."""
    theta, _, _ = best_theta(y, x, params, D)
    return float(dpt_inv(theta, params.lam))


def slud_maiti_mu_log(y: float, x, params_log: ModelParams, D: float) -> float:
    """Bias-corrected log-scale predictor ``exp(theta + sigma2/2)``."""
    theta, _, sigma2 = shrink(math.log(y), _xb(x, params_log.beta), params_log.A, D)
    return float(dpt_inv(float(theta) + 0.5 * float(sigma2), 0.0))


def fh_eblup(y: float, x, params_fh: ModelParams, D: float) -> float:
    """Fay-Herriot EBLUP on the original scale; may be negative."""
    xb = _xb(x, params_fh.beta)
    A = params_fh.A
    return float((A * y + D * xb) / (A + D))


def predict_arrays(y, X, params: ModelParams, D, model: str = "ptfh",
                   quad_order: int = DEFAULT_QUAD_ORDER, closed_form: bool = True):
    """Vectorized predictions; returns ``(theta, gamma, sigma2, mu_hat, mu_naive)``."""
    h = transformed(y, params.lam, model)
    theta, gamma, sigma2 = shrink(h, X @ params.beta, params.A, D)
    if model == "fh":
        return theta, gamma, sigma2, theta.copy(), theta.copy()
    lam = 0.0 if model == "logfh" else params.lam
    mu = gaussian_expectation_inv_many(theta, sigma2, lam, quad_order, closed_form)
    naive = np.asarray(dpt_inv(theta, lam), dtype=float)
    return theta, gamma, sigma2, mu, naive


def predict(data: AreaData, fit: FitResult, quad_order: int = DEFAULT_QUAD_ORDER) -> list[AreaPrediction]:
    """Per-area predictions at the fitted parameters and ``fit.d_used``."""
    theta, gamma, sigma2, mu, naive = predict_arrays(
        data.y, data.X, fit.params, fit.d_used, fit.model, quad_order)
    return [AreaPrediction(data.area_id[i], float(theta[i]), float(gamma[i]), float(sigma2[i]),
                           float(mu[i]), float(naive[i])) for i in range(data.m)]
