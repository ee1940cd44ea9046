"""Seeded random streams.

Every stream is a Philox (counter-based, 64-bit) generator keyed by a master
seed plus an integer path, so the draws for replication ``r`` of design ``k``
never depend on how many other streams were consumed or in which order.
"""
from __future__ import annotations

import zlib

import numpy as np

SEED_BITS = 64


def _key_part(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    part = int(part)
    if part < 0:
        raise ValueError("stream key parts must be non-negative")
    return part


def stream(seed: int, *key) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``; string key parts are hashed."""
    seed = int(seed)
    if not 0 <= seed < 2**SEED_BITS:
        raise ValueError("seed must be a 64-bit unsigned integer")
    ss = np.random.SeedSequence(seed, spawn_key=tuple(_key_part(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *key) -> int:
    """A 64-bit child seed, for handing to functions that take a plain seed."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_part(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
