"""Derivative-free one-dimensional maximization."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class SearchResult:
    x: float
    fx: float
    iterations: int
    converged: bool


def golden_max(f: Callable[[float], float], a: float, b: float, tol: float,
               max_iter: int = 200, fa: float | None = None,
               fb: float | None = None) -> SearchResult:
    """Maximize ``f`` on ``[a, b]`` by golden-section search.

    Returns the best point actually evaluated (interior probes and, when
    supplied, the endpoint values ``fa``/``fb``), so ``fx == f(x)`` exactly.
    """
    if b < a:
        a, b = b, a
    best_x, best_f = math.nan, -math.inf

    def consider(x, fx):
        nonlocal best_x, best_f
        if fx > best_f:
            best_x, best_f = x, fx

    if fa is not None:
        consider(a, fa)
    if fb is not None:
        consider(b, fb)
    if b - a <= tol:
        x = 0.5 * (a + b)
        consider(x, f(x))
        return SearchResult(best_x, best_f, 0, True)

    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    consider(c, fc)
    consider(d, fd)
    it = 0
    while b - a > tol and it < max_iter:
        it += 1
        # ">=" keeps the lower half on ties so flat profiles resolve to the smaller x
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
            consider(c, fc)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
            consider(d, fd)
    return SearchResult(best_x, best_f, it, b - a <= tol)


def grid_then_golden(f: Callable[[float], float], grid: Sequence[float], tol: float,
                     max_iter: int = 200) -> tuple[SearchResult, list[float]]:
    """Coarse grid to bracket the maximum, then golden-section refinement.

    Ties on the grid resolve to the smallest abscissa.  Returns the search
    result (whose ``iterations`` counts golden steps only) and the grid values.
    """
    grid = list(grid)
    values = [f(x) for x in grid]
    k = max(range(len(grid)), key=lambda i: (values[i], -i))
    if len(grid) == 1:
        return SearchResult(grid[0], values[0], 0, True), values
    lo = max(k - 1, 0)
    hi = min(k + 1, len(grid) - 1)
    res = golden_max(f, grid[lo], grid[hi], tol, max_iter, fa=values[lo], fb=values[hi])
    if values[k] >= res.fx:
        res = SearchResult(grid[k], values[k], res.iterations, res.converged)
    return res, values
