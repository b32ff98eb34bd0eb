"""Deterministic 64-bit hashing shared by every table.

Two independent mixes are used throughout the simulator:

* ``digest64`` -- FNV-1a over a byte string followed by a splitmix-style
  avalanche finalizer.  This produces the key-hash half of a connection
  signature and is pinned so results are bit-exact across runs, platforms
  and the vectorized batch path.
* ``mix64`` -- a second avalanche (different multipliers) used for ECMP bin
  choice and for cuckoo section indexes, so that bin placement is
  independent of signature equality.

The batch variants operate on numpy ``uint64`` arrays and are exactly
equivalent to the scalar code; the workload generator relies on them to
hash millions of keys per second.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

# splitmix64 finalizer constants
_SM_M1 = 0xBF58476D1CE4E5B9
_SM_M2 = 0x94D049BB133111EB

# murmur3 fmix64 constants, used for the independent second mix
_MM_M1 = 0xFF51AFD7ED558CCD
_MM_M2 = 0xC4CEB9FE1A85EC53


def _avalanche(h: int) -> int:
    h ^= h >> 30
    h = (h * _SM_M1) & MASK64
    h ^= h >> 27
    h = (h * _SM_M2) & MASK64
    h ^= h >> 31
    return h


def digest64(data: bytes) -> int:
    """FNV-1a over ``data`` followed by the avalanche finalizer."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & MASK64
    return _avalanche(h)


def mix64(x: int) -> int:
    """Independent 64-bit avalanche of ``x`` (murmur3 fmix64)."""
    x &= MASK64
    x ^= x >> 33
    x = (x * _MM_M1) & MASK64
    x ^= x >> 33
    x = (x * _MM_M2) & MASK64
    x ^= x >> 33
    return x


def digest64_batch(columns: list[np.ndarray]) -> np.ndarray:
    """Vectorized ``digest64`` over per-byte columns.

    ``columns[i]`` holds byte ``i`` of every input, so the sequence of
    columns must match the byte order fed to the scalar function.
    """
    h = np.full(columns[0].shape, _FNV_OFFSET, dtype=np.uint64)
    prime = np.uint64(_FNV_PRIME)
    with np.errstate(over="ignore"):
        for col in columns:
            h = (h ^ col.astype(np.uint64)) * prime
        h ^= h >> np.uint64(30)
        h *= np.uint64(_SM_M1)
        h ^= h >> np.uint64(27)
        h *= np.uint64(_SM_M2)
        h ^= h >> np.uint64(31)
    return h


def mix64_batch(x: np.ndarray) -> np.ndarray:
    """Vectorized ``mix64``."""
    x = x.astype(np.uint64)
    with np.errstate(over="ignore"):
        x ^= x >> np.uint64(33)
        x *= np.uint64(_MM_M1)
        x ^= x >> np.uint64(33)
        x *= np.uint64(_MM_M2)
        x ^= x >> np.uint64(33)
    return x
