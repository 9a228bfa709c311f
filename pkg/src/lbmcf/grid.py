"""Discretized semi-flat chart.

Conventions used throughout the package:

* Fields live on the base box ``[-r, r]^n``; the fiber ball ``B(r')`` is never
  discretized because every integrand is y-invariant.
* Holomorphic derivatives act on y-invariant data as ``d_j = 0.5 * d/dx^j``.
* The Kaehler form is ``omega = (i/2) g_{kj} dz^j ^ dzbar^k``, so
  ``omega^n / n! = det(g) dx dy`` and the Riemannian metric on the fiber is ``2g``.
* Scalar fields have shape ``grid.shape``; vector fields append one axis of
  length ``n``; matrix fields append two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

BC_MODES = ("periodic", "one-sided")


class GridError(ValueError):
    """Invalid grid configuration or field/grid mismatch."""


class NonSPDMetricError(ValueError):
    """A metric (or induced metric) failed its positive-definiteness check."""

    def __init__(self, message: str, node: tuple[int, ...] | None = None):
        super().__init__(message if node is None else f"{message} at node {node}")
        self.node = node


@dataclass(frozen=True)
class GridConfig:
    n: int
    r: float
    r_prime: float
    N: int
    bc: str = "one-sided"


@dataclass(frozen=True)
class Grid:
    n: int
    r: float
    r_prime: float
    N: int
    bc: str
    h: float
    axis: np.ndarray = field(repr=False, compare=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.n

    @property
    def periodic(self) -> bool:
        return self.bc == "periodic"

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(*shape, n)``."""
        mesh = np.meshgrid(*([self.axis] * self.n), indexing="ij")
        return np.stack(mesh, axis=-1)

    @cached_property
    def weights(self) -> np.ndarray:
        """Tensor-product quadrature weights (trapezoid or rectangle)."""
        w1 = np.full(self.N, self.h)
        if not self.periodic:
            w1[0] *= 0.5
            w1[-1] *= 0.5
        w = w1
        for _ in range(self.n - 1):
            w = np.multiply.outer(w, w1)
        return w

    def config(self) -> GridConfig:
        return GridConfig(self.n, self.r, self.r_prime, self.N, self.bc)

    def nearest_node(self, x: Sequence[float]) -> tuple[int, ...]:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = np.rint((x - self.axis[0]) / self.h).astype(int)
        return tuple(int(i) for i in np.clip(idx, 0, self.N - 1))

    def node_of(self, x: Sequence[float], tol: float = 1e-12) -> tuple[int, ...] | None:
        """Index of the node at ``x`` or None when ``x`` is not a node."""
        idx = self.nearest_node(x)
        node = np.array([self.axis[i] for i in idx])
        if np.all(np.abs(node - np.atleast_1d(x)) <= tol * max(1.0, self.r)):
            return idx
        return None

    def interior_mask(self, width: int) -> np.ndarray:
        """Boolean mask dropping ``width`` layers at each non-periodic face."""
        mask = np.ones(self.shape, dtype=bool)
        if self.periodic or width <= 0:
            return mask
        for ax in range(self.n):
            sl = [slice(None)] * self.n
            sl[ax] = slice(0, width)
            mask[tuple(sl)] = False
            sl[ax] = slice(self.N - width, self.N)
            mask[tuple(sl)] = False
        return mask


def build_grid(config: GridConfig) -> Grid:
    n, r, rp, N, bc = config.n, config.r, config.r_prime, config.N, config.bc
    if n not in (1, 2, 3):
        raise GridError(f"complex dimension n={n} unsupported (1 <= n <= 3)")
    if not (math.isfinite(r) and math.isfinite(rp)):
        raise GridError("radii must be finite")
    if r <= 0 or rp <= 0:
        raise GridError("radii must be positive")
    if N < 8:
        raise GridError(f"resolution too small: N={N} < 8")
    if bc not in BC_MODES:
        raise GridError(f"unknown boundary mode {bc!r}")
    if bc == "periodic":
        h = 2.0 * r / N
        axis = -r + h * np.arange(N)
    else:
        h = 2.0 * r / (N - 1)
        axis = -r + h * np.arange(N)
        axis[-1] = r
    return Grid(n=n, r=float(r), r_prime=float(rp), N=int(N), bc=bc, h=h, axis=axis)


def check_periodic(f: np.ndarray, grid: Grid, tol: float = 1e-8) -> bool:
    """True when ``f`` continues smoothly across the wrap seam on every axis.

    Compares the linear extrapolation of the last two nodes with the first node.
    """
    for ax in range(grid.n):
        last = np.take(f, -1, axis=ax)
        prev = np.take(f, -2, axis=ax)
        first = np.take(f, 0, axis=ax)
        seam = 2.0 * last - prev
        scale = max(1.0, float(np.max(np.abs(f))))
        if np.max(np.abs(seam - first)) > tol * scale + 4.0 * grid.h * np.max(np.abs(last - prev)):
            return False
    return True


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

def _shift(f: np.ndarray, k: int, ax: int) -> np.ndarray:
    return np.roll(f, -k, axis=ax)


def _d_periodic(f: np.ndarray, order: int, ax: int, h: float) -> np.ndarray:
    if order == 1:
        return (_shift(f, 1, ax) - _shift(f, -1, ax)) / (2.0 * h)
    if order == 2:
        return (_shift(f, 1, ax) - 2.0 * f + _shift(f, -1, ax)) / h**2
    return (
        _shift(f, 2, ax) - 2.0 * _shift(f, 1, ax) + 2.0 * _shift(f, -1, ax) - _shift(f, -2, ax)
    ) / (2.0 * h**3)


def _d_one_sided(f: np.ndarray, order: int, ax: int, h: float) -> np.ndarray:
    g = np.moveaxis(f, ax, 0)
    out = np.empty_like(g)
    if order == 1:
        out[1:-1] = (g[2:] - g[:-2]) / (2.0 * h)
        out[0] = (-3.0 * g[0] + 4.0 * g[1] - g[2]) / (2.0 * h)
        out[-1] = (3.0 * g[-1] - 4.0 * g[-2] + g[-3]) / (2.0 * h)
    elif order == 2:
        out[1:-1] = (g[2:] - 2.0 * g[1:-1] + g[:-2]) / h**2
        out[0] = (2.0 * g[0] - 5.0 * g[1] + 4.0 * g[2] - g[3]) / h**2
        out[-1] = (2.0 * g[-1] - 5.0 * g[-2] + 4.0 * g[-3] - g[-4]) / h**2
    else:
        out[2:-2] = (g[4:] - 2.0 * g[3:-1] + 2.0 * g[1:-3] - g[:-4]) / (2.0 * h**3)
        c = (-2.5, 9.0, -12.0, 7.0, -1.5)
        for i in (0, 1):
            out[i] = sum(ck * g[i + k] for k, ck in enumerate(c)) / h**3
        for i in (-1, -2):
            out[i] = -sum(ck * g[i - k] for k, ck in enumerate(c)) / h**3
    return np.moveaxis(out, 0, ax)


def diff(field: np.ndarray, grid: Grid, axes: Sequence[int]) -> np.ndarray:
    """Partial derivative ``d^|axes| field / dx^axes`` on the leading grid axes.

    Repeated axes use the matching higher-order stencil; distinct axes are
    composed. Second-order central in the interior, second-order one-sided at
    non-periodic faces.
    """
    axes = tuple(int(a) for a in axes)
    if len(axes) == 0:
        return np.array(field, dtype=float, copy=True)
    if len(axes) > 3:
        raise ValueError(f"derivative order {len(axes)} > 3 unsupported")
    for a in axes:
        if not 0 <= a < grid.n:
            raise ValueError(f"axis {a} out of range for n={grid.n}")
    field = np.asarray(field)
    if field.shape[: grid.n] != grid.shape:
        raise GridError(f"field shape {field.shape} does not match grid {grid.shape}")
    if not grid.periodic and grid.N < 6 and max(axes.count(a) for a in axes) == 3:
        raise GridError("third derivative needs at least 6 nodes per axis")
    out = field
    kernel = _d_periodic if grid.periodic else _d_one_sided
    for a in sorted(set(axes)):
        out = kernel(out, axes.count(a), a, grid.h)
    return out


def gradient(f: np.ndarray, grid: Grid) -> np.ndarray:
    """``(df/dx^1, ..., df/dx^n)`` stacked on a trailing axis."""
    return np.stack([diff(f, grid, (i,)) for i in range(grid.n)], axis=-1)


def hessian(f: np.ndarray, grid: Grid) -> np.ndarray:
    n = grid.n
    out = np.empty(f.shape + (n, n))
    for i in range(n):
        for j in range(i, n):
            d = diff(f, grid, (i, j))
            out[..., i, j] = d
            out[..., j, i] = d
    return out


# ---------------------------------------------------------------------------
# Metric and potential fields
# ---------------------------------------------------------------------------

@dataclass
class MetricField:
    """Per-node real symmetric positive-definite ``g_{kj}``, y-invariant."""

    values: np.ndarray
    constant: bool = False

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim < 2 or v.shape[-1] != v.shape[-2]:
            raise GridError("metric values must end in a square matrix")
        if not np.allclose(v, np.swapaxes(v, -1, -2), rtol=0, atol=1e-14 * max(1.0, np.abs(v).max())):
            raise NonSPDMetricError("metric is not symmetric")
        self.values = 0.5 * (v + np.swapaxes(v, -1, -2))
        self.chol  # validates positive definiteness

    @classmethod
    def constant_metric(cls, grid: Grid, matrix) -> "MetricField":
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        if m.shape != (grid.n, grid.n):
            raise GridError(f"metric matrix shape {m.shape} != ({grid.n}, {grid.n})")
        vals = np.broadcast_to(m, grid.shape + m.shape).copy()
        return cls(vals, constant=True)

    @classmethod
    def identity(cls, grid: Grid) -> "MetricField":
        return cls.constant_metric(grid, np.eye(grid.n))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "MetricField":
        """``fn(x)`` maps a coordinate array ``(*shape, n)`` to ``(*shape, n, n)``."""
        return cls(np.asarray(fn(grid.coords), dtype=float), constant=False)

    @property
    def n(self) -> int:
        return self.values.shape[-1]

    @cached_property
    def chol(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.values)
        except np.linalg.LinAlgError:
            ev = np.linalg.eigvalsh(self.values)
            bad = np.argwhere(ev[..., 0] <= 0)
            node = tuple(int(i) for i in bad[0]) if len(bad) else None
            raise NonSPDMetricError("metric is not positive definite", node) from None

    @cached_property
    def inv(self) -> np.ndarray:
        return np.linalg.inv(self.values)

    @cached_property
    def det(self) -> np.ndarray:
        return np.linalg.det(self.values)

    def at(self, node: tuple[int, ...]) -> np.ndarray:
        return self.values[node]

    def scaled(self, k: float) -> "MetricField":
        return MetricField(k * self.values, constant=self.constant)

    def lambda_g(self) -> float:
        """Square root of the smallest eigenvalue of g over the box."""
        return float(np.sqrt(np.linalg.eigvalsh(self.values)[..., 0].min()))


@dataclass
class PotentialField:
    """``phi = -log h(e, e)`` sampled per node; y-invariant by construction."""

    values: np.ndarray
    t: float | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("potential has non-finite values")


# ---------------------------------------------------------------------------
# Christoffels, quadrature, fiber volume
# ---------------------------------------------------------------------------

def christoffel(g: MetricField, grid: Grid) -> np.ndarray:
    """Kaehler Christoffels ``Gamma[..., k, i, j] = g^{kl} d_i g_{jl}``."""
    n = grid.n
    out = np.zeros(grid.shape + (n, n, n))
    if g.constant:
        return out
    dg = np.stack([0.5 * diff(g.values, grid, (i,)) for i in range(n)], axis=-3)  # [..., i, j, l]
    return np.einsum("...kl,...ijl->...kij", g.inv, dg)


def integrate_x(f: np.ndarray, g: MetricField | None, grid: Grid, weight: np.ndarray | None = None) -> float:
    """``int f * weight * det(g) dx`` over the base box."""
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise GridError(f"integrand shape {f.shape} does not match grid {grid.shape}")
    integrand = f * grid.weights
    if weight is not None:
        if np.shape(weight) != grid.shape:
            raise GridError("weight shape mismatch")
        integrand = integrand * weight
    if g is not None:
        integrand = integrand * g.det
    # contiguous ravel -> numpy pairwise summation, fixed order
    return float(np.sum(np.ascontiguousarray(integrand).ravel()))


def ball_volume(n: int, radius: float) -> float:
    """Euclidean volume of the n-ball."""
    return math.pi ** (n / 2) * radius**n / math.gamma(n / 2 + 1)


def fiber_volume(g_at_x0, r_prime: float) -> float:
    """Riemannian volume of ``{x0} x B(r')``: ``sqrt(2^n det g(x0)) Vol(B(r'))``."""
    m = np.atleast_2d(np.asarray(g_at_x0, dtype=float))
    n = m.shape[0]
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise NonSPDMetricError("fiber metric is not positive definite") from None
    return math.sqrt(2**n * float(np.linalg.det(m))) * ball_volume(n, r_prime)
