"""Counter-based random streams.

Every stream is a pure function of ``(seed, *key)``: replicate ``r`` of a
permutation test draws from ``stream(seed, "perm", r)`` no matter which worker
computes it or in which order, so results do not depend on thread count.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream"]


def _key_word(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if part < 0:
        raise ValueError(f"stream key parts must be non-negative, got {part}")
    return int(part)


def stream(seed: int, *key: int | str) -> np.random.Generator:
    """Return an independent Philox generator for ``(seed, *key)``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_word(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
