"""Deterministic seed derivation (splitmix64)."""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    z = (x + _GAMMA) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(master: int, *ids: int) -> int:
    """Fold ``ids`` into ``master`` one splitmix round at a time.

    ``derive_seed(s, a, b)`` differs from ``derive_seed(s, b, a)``, so the
    position of each id is part of the lineage.
    """
    z = splitmix64(int(master) & _MASK)
    for i in ids:
        z = splitmix64(z ^ (int(i) & _MASK))
    return z


def splitmix64_array(x: np.ndarray) -> np.ndarray:
    """Vectorised splitmix64 over a uint64 array (wrapping arithmetic)."""
    z = np.asarray(x, dtype=np.uint64) + np.uint64(_GAMMA)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))
