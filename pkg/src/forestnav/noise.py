"""Seeded 2-D value noise for procedural trunk and foliage textures.

Lattice values come from an integer hash of (seed, xi, yi), so any sample
is reproducible from coordinates alone; no global RNG state is involved.
"""

from __future__ import annotations

import numpy as np

_GOLD = np.uint64(0x9E3779B97F4A7C15)


def _mix(h: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, vectorized over uint64 arrays."""
    h = (h ^ (h >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return h ^ (h >> np.uint64(31))


def hash_u64(*parts: int) -> int:
    """Deterministic 64-bit hash of a tuple of integers."""
    h = np.uint64(0x8B72E7D6A43C1965)
    with np.errstate(over="ignore"):
        for p in parts:
            h = _mix((h + np.uint64(p & 0xFFFFFFFFFFFFFFFF)) * _GOLD)
    return int(h)


def _lattice(seed: int, xi: np.ndarray, yi: np.ndarray) -> np.ndarray:
    """Hash lattice coordinates to uniform values in [0, 1)."""
    with np.errstate(over="ignore"):
        h = _mix(
            (xi.astype(np.uint64) * _GOLD)
            ^ _mix(yi.astype(np.uint64) + np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
        )
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * (3.0 - 2.0 * t)


def value_noise(u, v, seed: int, period_u: int = 0) -> np.ndarray:
    """Smooth value noise in [0, 1] sampled at lattice coordinates (u, v).

    One lattice cell spans one unit of u/v. When period_u > 0 the field is
    periodic along u with that many cells (used for closed trunk surfaces).
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u, v = np.broadcast_arrays(u, v)
    ui = np.floor(u).astype(np.int64)
    vi = np.floor(v).astype(np.int64)
    fu = _fade(u - ui)
    fv = _fade(v - vi)
    if period_u > 0:
        u0 = np.mod(ui, period_u)
        u1 = np.mod(ui + 1, period_u)
    else:
        u0 = ui
        u1 = ui + 1
    n00 = _lattice(seed, u0, vi)
    n10 = _lattice(seed, u1, vi)
    n01 = _lattice(seed, u0, vi + 1)
    n11 = _lattice(seed, u1, vi + 1)
    top = n00 + fu * (n10 - n00)
    bot = n01 + fu * (n11 - n01)
    return top + fv * (bot - top)
