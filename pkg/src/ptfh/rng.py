"""Keyed random streams.

Every stream is a Philox generator seeded from ``(seed, *keys)``, so a
replicate's draws depend only on its key and never on execution order.
"""

from __future__ import annotations

import os
import zlib

import numpy as np

SEED_ENV = "PTFH_SEED"
DEFAULT_SEED = 20170101


def _key(k) -> int:
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("stream keys must be non-negative")
        return int(k)
    return zlib.crc32(str(k).encode("utf-8"))


def stream(seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``; string keys are hashed."""
    ss = np.random.SeedSequence([_key(seed), *(_key(k) for k in keys)])
    return np.random.Generator(np.random.Philox(ss))


def default_seed() -> int:
    """Seed from ``$PTFH_SEED`` when set, else a fixed constant."""
    value = os.environ.get(SEED_ENV)
    return int(value) if value else DEFAULT_SEED
