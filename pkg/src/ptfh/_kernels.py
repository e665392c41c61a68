"""Compiled inner loops for the random-effect variance search."""

from __future__ import annotations

import math

import numba as nb
import numpy as np

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@nb.njit(cache=True)
def gls_concentrated(h, X, v, beta):
    """Fill ``beta`` with the GLS fit at variances ``v``; return the concentrated loglik."""
    m, p = X.shape
    M = np.zeros((p, p))
    r = np.zeros(p)
    ll = 0.0
    for i in range(m):
        w = 1.0 / v[i]
        ll -= math.log(v[i])
        for j in range(p):
            xw = X[i, j] * w
            r[j] += xw * h[i]
            for k in range(p):
                M[j, k] += xw * X[i, k]
    if p == 1:
        beta[0] = r[0] / M[0, 0]
    else:
        sol = np.linalg.solve(M, r)
        for j in range(p):
            beta[j] = sol[j]
    for i in range(m):
        res = h[i]
        for j in range(p):
            res -= X[i, j] * beta[j]
        ll -= res * res / v[i]
    return ll


@nb.njit(cache=True)
def _ll_at(h, X, d, A, beta, v):
    for i in range(d.shape[0]):
        v[i] = A + d[i]
    return gls_concentrated(h, X, v, beta)


@nb.njit(cache=True)
def _score_at(h, X, d, A, beta, v):
    """Derivative of the concentrated loglik in ``A`` (envelope theorem)."""
    _ll_at(h, X, d, A, beta, v)
    s = 0.0
    for i in range(d.shape[0]):
        res = h[i]
        for j in range(X.shape[1]):
            res -= X[i, j] * beta[j]
        w = 1.0 / v[i]
        s += w * (res * res * w - 1.0)
    return s


@nb.njit(cache=True)
def _polish(h, X, d, lo, hi, beta, v):
    """Bisect the score on ``[lo, hi]``; NaN when it has no sign change."""
    s_lo = _score_at(h, X, d, lo, beta, v)
    s_hi = _score_at(h, X, d, hi, beta, v)
    if not (s_lo > 0.0 and s_hi < 0.0):
        return math.nan
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _score_at(h, X, d, mid, beta, v) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@nb.njit(cache=True)
def search_a(h, X, d, grid, tol, max_iter):
    """Grid bracket then golden section over ``A``; returns ``(A, ll, iterations, converged)``.

    Grid ties go to the smaller ``A``.  The golden-section optimum is polished
    by bisecting the score within the final bracket; ``ll`` is always the
    concentrated loglik at the returned ``A``.
    """
    p = X.shape[1]
    beta = np.zeros(p)
    v = np.zeros(d.shape[0])
    n = grid.shape[0]
    vals = np.empty(n)
    k = 0
    for i in range(n):
        vals[i] = _ll_at(h, X, d, grid[i], beta, v)
        if vals[i] > vals[k]:
            k = i
    best_x, best_f = grid[k], vals[k]
    lo = k - 1 if k > 0 else 0
    hi = k + 1 if k < n - 1 else n - 1
    a, b = grid[lo], grid[hi]
    c = b - INV_PHI * (b - a)
    dd = a + INV_PHI * (b - a)
    fc = _ll_at(h, X, d, c, beta, v)
    fd = _ll_at(h, X, d, dd, beta, v)
    if fc > best_f:
        best_x, best_f = c, fc
    if fd > best_f:
        best_x, best_f = dd, fd
    it = 0
    while b - a > tol and it < max_iter:
        it += 1
        if fc >= fd:
            b, dd, fd = dd, c, fc
            c = b - INV_PHI * (b - a)
            fc = _ll_at(h, X, d, c, beta, v)
            if fc > best_f:
                best_x, best_f = c, fc
        else:
            a, c, fc = c, dd, fd
            dd = a + INV_PHI * (b - a)
            fd = _ll_at(h, X, d, dd, beta, v)
            if fd > best_f:
                best_x, best_f = dd, fd
    # the likelihood is flat to roundoff near the optimum; the score root is sharper
    # golden comparisons at roundoff level can leave the bracket beside the root,
    # so widen it until the score changes sign
    root = math.nan
    w = tol
    while math.isnan(root) and w < 1e-3 * (1.0 + best_x):
        lo = max(grid[0], best_x - w)
        hi = min(grid[n - 1], best_x + w)
        root = _polish(h, X, d, lo, hi, beta, v)
        w *= 4.0
    if not math.isnan(root):
        f_root = _ll_at(h, X, d, root, beta, v)
        if f_root >= best_f - 1e-12 * abs(best_f):
            best_x, best_f = root, f_root
    return best_x, best_f, it, b - a <= tol
