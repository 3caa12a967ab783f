"""Counter-based seed derivation so results never depend on execution order."""
from __future__ import annotations

import zlib

import numpy as np


def _tag(key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key)


def derive_seed(master_seed: int, *keys) -> int:
    """Mix ``master_seed`` with integer or string keys into a 64-bit seed."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(_tag(k) for k in keys))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(hi) << 32 | int(lo)


def stream(master_seed: int, *keys) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master_seed, *keys)))
