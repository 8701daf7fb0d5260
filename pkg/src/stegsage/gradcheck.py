"""Central finite differences for checking hand-written backward passes."""

from __future__ import annotations

from typing import Callable

import numpy as np


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place (restored after)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        fp = f()
        flat[j] = orig - h
        fm = f()
        flat[j] = orig
        gflat[j] = (fp - fm) / (2 * h)
    return g


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max abs difference relative to the larger of the two gradients' max magnitude."""
    scale = max(floor, float(np.abs(analytic).max(initial=0)), float(np.abs(numeric).max(initial=0)))
    return float(np.abs(analytic - numeric).max(initial=0)) / scale
