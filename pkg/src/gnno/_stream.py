"""Counter-based random numbers keyed by (seed, step, ordinal, draw).

Each value is a pure function of its key, so a target's draws do not depend
on how targets are batched or on which worker produces them.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK53 = np.uint64((1 << 53) - 1)


def _mix(x: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer
    x = x + _GOLDEN
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def _u64(value) -> np.ndarray:
    return np.asarray(value).astype(np.int64).astype(np.uint64)


def hash_key(*parts) -> np.ndarray:
    """Broadcast-combine integer key parts into 64-bit hashes."""
    with np.errstate(over="ignore"):
        h = np.zeros((), dtype=np.uint64)
        for part in parts:
            h = _mix(h ^ _u64(part))
        return h


def uniform(*parts) -> np.ndarray:
    """Doubles in [0, 1) with 53 random bits, one per broadcast key."""
    bits = hash_key(*parts) >> np.uint64(11)
    return (bits & _MASK53).astype(np.float64) * (1.0 / (1 << 53))


def integers(high, *parts) -> np.ndarray:
    """Integers in ``[0, high)``; ``high`` broadcasts against the key."""
    high = np.asarray(high, dtype=np.int64)
    out = np.floor(uniform(*parts) * high).astype(np.int64)
    return np.minimum(out, np.maximum(high - 1, 0))
