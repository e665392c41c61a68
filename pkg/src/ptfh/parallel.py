"""Order-preserving map over worker processes."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def pmap(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    """``list(map(fn, items))``, optionally spread over ``threads`` processes.

    Results come back in input order, so callers that reduce them in a fixed
    order get identical output at any thread count.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    workers = min(threads, len(items))
    chunk = max(1, math.ceil(len(items) / (4 * workers)))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=chunk))
