"""Gaussian expectations of the inverse transform.

``gaussian_expectation_inv(theta, sigma2, lam, order)`` computes
``E[dpt_inv(T, lam)]`` for ``T ~ N(theta, sigma2)``.

Gauss-Hermite nodes come from the Golub-Welsch eigen decomposition of the
Hermite Jacobi matrix.  The integrand has branch points at ``t = +-i/lam``;
when these sit close to the bulk of the Gaussian (large ``lam * sigma``) a
Gauss-Hermite rule of moderate order stalls around 1e-4 relative error, so in
that regime a composite Gauss-Legendre rule graded towards the branch point
is used instead.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .transform import LAMBDA_EPS, dpt_inv

_SQRT_PI = math.sqrt(math.pi)
_SQRT_2PI = math.sqrt(2.0 * math.pi)
# predicted Gauss-Hermite error exp(-2 d sqrt(2n)) must fall below this
_GH_TARGET = 1e-9


@lru_cache(maxsize=64)
def _hermite_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(1, order)
    nodes, vecs = eigh_tridiagonal(np.zeros(order), np.sqrt(k / 2.0))
    weights = _SQRT_PI * vecs[0, :] ** 2
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def hermite_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for ``int exp(-u**2) f(u) du`` (read-only, cached)."""
    order = int(order)
    if order < 2:
        raise ValueError("quadrature order must be >= 2")
    return _hermite_rule(order)


@lru_cache(maxsize=16)
def _legendre_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _uses_hermite(lam: float, sigma: float, order: int) -> bool:
    if lam < LAMBDA_EPS or sigma == 0.0:
        return True
    # distance of the branch points from the real axis, in Hermite units
    dist = 1.0 / (math.sqrt(2.0) * lam * sigma)
    return 2.0 * dist * math.sqrt(2.0 * order) > -math.log(_GH_TARGET)


def _graded_nodes(theta: float, sigma: float, lam: float, order: int):
    """Standard-normal nodes/weights on panels graded around ``t = 0``."""
    half = 10.0 + sigma
    z0 = min(max(-theta / sigma, -half), half)
    delta = 1.0 / (lam * sigma)
    cuts = {-half, half}
    step = delta
    while step < 2 * half:
        for c in (z0 - step, z0 + step):
            if -half < c < half:
                cuts.add(c)
        step *= 2.0
    cuts = sorted(cuts)
    xs, ws = _legendre_rule(max(12, order // 3))
    zs, wz = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        mid, hw = 0.5 * (a + b), 0.5 * (b - a)
        z = mid + hw * xs
        zs.append(z)
        wz.append(hw * ws * np.exp(-0.5 * z * z) / _SQRT_2PI)
    return np.concatenate(zs), np.concatenate(wz)


def gaussian_expectation_inv(theta: float, sigma2: float, lam: float, order: int = 50,
                             closed_form: bool = True) -> float:
    """``E[dpt_inv(T, lam)]`` for ``T ~ N(theta, sigma2)``.

    At ``lam < LAMBDA_EPS`` the lognormal mean ``exp(theta + sigma2/2)`` is
    returned unless ``closed_form`` is False.
    """
    if sigma2 < 0:
        raise ValueError("sigma2 must be >= 0")
    if sigma2 == 0.0:
        return float(dpt_inv(theta, lam))
    if lam < LAMBDA_EPS and closed_form:
        return math.exp(theta + 0.5 * sigma2)
    sigma = math.sqrt(sigma2)
    if _uses_hermite(lam, sigma, order):
        u, w = hermite_rule(order)
        vals = dpt_inv(theta + math.sqrt(2.0) * sigma * u, lam)
        return float(np.dot(w, vals) / _SQRT_PI)
    z, w = _graded_nodes(theta, sigma, lam, order)
    return float(np.dot(w, dpt_inv(theta + sigma * z, lam)))


def gaussian_expectation_inv_many(theta, sigma2, lam: float, order: int = 50,
                                  closed_form: bool = True) -> np.ndarray:
    """Vectorized :func:`gaussian_expectation_inv` over arrays of moments."""
    theta = np.asarray(theta, dtype=float)
    sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=float), theta.shape)
    if lam < LAMBDA_EPS and closed_form:
        return np.exp(theta + 0.5 * sigma2)
    out = np.empty(theta.shape)
    sigma = np.sqrt(sigma2)
    u, w = hermite_rule(order)
    zero = sigma2 == 0.0
    if np.any(zero):
        out[zero] = dpt_inv(theta[zero], lam)
    gh = np.array([_uses_hermite(lam, s, order) for s in sigma.ravel()]).reshape(theta.shape)
    gh &= ~zero
    if np.any(gh):
        t = theta[gh][:, None] + math.sqrt(2.0) * sigma[gh][:, None] * u[None, :]
        out[gh] = np.asarray(dpt_inv(t, lam)) @ w / _SQRT_PI
    for idx in zip(*np.nonzero(~gh & ~zero)):
        out[idx] = gaussian_expectation_inv(theta[idx], sigma2[idx], lam, order, closed_form)
    return out
