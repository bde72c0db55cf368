"""Gaussian sampling by the Box-Muller transform."""

from __future__ import annotations

import math

import numpy as np


def box_muller(u1, u2):
    """Map uniforms ``u1`` in (0, 1] and ``u2`` in [0, 1) to two independent N(0, 1) draws.

    Works elementwise on scalars or arrays.
    """
    u1 = np.asarray(u1, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    if np.any(u1 <= 0) or np.any(u1 > 1):
        raise ValueError("u1 must lie in (0, 1]")
    if np.any(u2 < 0) or np.any(u2 >= 1):
        raise ValueError("u2 must lie in [0, 1)")
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * math.pi * u2
    g0, g1 = radius * np.cos(angle), radius * np.sin(angle)
    if g0.ndim == 0:
        return float(g0), float(g1)
    return g0, g1


def standard_normal(rng: np.random.Generator, size) -> np.ndarray:
    """Standard normal array of shape ``size`` built from paired uniforms."""
    shape = (size,) if np.isscalar(size) else tuple(size)
    m = int(np.prod(shape))
    k = (m + 1) // 2
    u1 = 1.0 - rng.random(k)
    u2 = rng.random(k)
    g0, g1 = box_muller(u1, u2)
    out = np.empty(2 * k)
    out[0::2], out[1::2] = g0, g1
    return out[:m].reshape(shape)


def normal(rng: np.random.Generator, mean: float, var: float) -> float:
    g0, _ = box_muller(1.0 - rng.random(), rng.random())
    return mean + math.sqrt(var) * g0
