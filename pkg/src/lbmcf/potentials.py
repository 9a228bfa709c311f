"""Catalog of initial potentials keyed by expression id."""

from __future__ import annotations

import math

import numpy as np

from .grid import Grid, PotentialField

CATALOG = ("flat", "quadratic", "quartic_bump", "sine")


def flat(grid: Grid) -> np.ndarray:
    return np.zeros(grid.shape)


def quadratic(grid: Grid, A, b: float = 0.0) -> np.ndarray:
    """``b + x^T A x`` for symmetric ``A``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape != (grid.n, grid.n):
        raise ValueError(f"A has shape {A.shape}, expected ({grid.n}, {grid.n})")
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-14 * max(1.0, np.abs(A).max())):
        raise ValueError("A must be symmetric")
    x = grid.coords
    return b + np.einsum("...i,ij,...j->...", x, A, x)


def quartic_bump(grid: Grid, a: float = 1.0, w: float = 0.5) -> np.ndarray:
    """``a |x|^4 exp(-|x|^2 / w^2)``: smooth, quartic at the origin, decaying outward."""
    if w <= 0:
        raise ValueError("bump width must be positive")
    r2 = np.sum(grid.coords**2, axis=-1)
    return a * r2 * r2 * np.exp(-r2 / w**2)


def sine(grid: Grid, k: int = 1, amp: float = 0.1) -> np.ndarray:
    """``amp * sum_i sin(pi k x_i / r)``; periodic on the box for integer ``k``."""
    return amp * np.sum(np.sin(math.pi * k * grid.coords / grid.r), axis=-1)


def make_potential(kind: str, grid: Grid, **params) -> PotentialField:
    if kind == "flat":
        vals = flat(grid)
    elif kind == "quadratic":
        vals = quadratic(grid, params.get("A", np.zeros((grid.n, grid.n))), params.get("b", 0.0))
    elif kind == "quartic_bump":
        vals = quartic_bump(grid, params.get("a", 1.0), params.get("w", 0.5))
    elif kind == "sine":
        vals = sine(grid, params.get("k", 1), params.get("amp", 0.1))
    else:
        raise KeyError(f"unknown potential {kind!r}; catalog: {', '.join(CATALOG)}")
    return PotentialField(vals, t=0.0)


def bump_test_function(grid: Grid, center=None, radius: float = 1.0) -> np.ndarray:
    """Compactly supported ``exp(1 - 1/(1 - s^2))`` with ``s = |x - c| / radius``; equals 1 at ``c``."""
    c = np.zeros(grid.n) if center is None else np.atleast_1d(np.asarray(center, dtype=float))
    s2 = np.sum((grid.coords - c) ** 2, axis=-1) / radius**2
    out = np.zeros(grid.shape)
    inside = s2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s2[inside]))
    return out


class _ScaledNodes:
    """Grid stand-in whose coordinates are multiplied by ``s``."""

    def __init__(self, grid: Grid, s: float):
        self.coords = grid.coords * s
        self.n, self.r, self.shape = grid.n, grid.r, grid.shape


def self_similar_family(kind: str, grid: Grid, times, **params) -> np.ndarray:
    """``phi_t(x) = -t phi(x / sqrt(-t))`` for negative times; static for quadratics."""
    times = np.asarray(times, dtype=float)
    if np.any(times >= 0):
        raise ValueError("family times must be negative")
    return np.array([-t * make_potential(kind, _ScaledNodes(grid, 1.0 / np.sqrt(-t)), **params).values for t in times])
