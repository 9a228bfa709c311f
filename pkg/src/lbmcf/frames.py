"""Sections of ``T^{1,0} (+) T^{0,1*}`` over the graphical chart and their calculus.

A section ``Y^j d/dz^j (+) Y_jbar dzbar^j`` is stored as two arrays ``up`` and
``dn`` of shape ``(*grid.shape, n)``. Frames are stored with the frame index
before the component index: ``E_up[..., i, k]`` is component ``k`` of ``E_i``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .curvature import CurvaturePack, curvature_pack, half_grad, mean_curvature_oneform
from .grid import Grid, MetricField, christoffel, diff, integrate_x


@dataclass
class SectionField:
    up: np.ndarray
    dn: np.ndarray

    def __add__(self, other: "SectionField") -> "SectionField":
        return SectionField(self.up + other.up, self.dn + other.dn)

    def __sub__(self, other: "SectionField") -> "SectionField":
        return SectionField(self.up - other.up, self.dn - other.dn)

    def scale(self, f) -> "SectionField":
        """Multiply by a scalar or a per-node scalar field."""
        f = np.asarray(f)
        if f.ndim:
            f = f[..., None]
        return SectionField(f * self.up, f * self.dn)

    @classmethod
    def zeros_like(cls, other: "SectionField") -> "SectionField":
        return cls(np.zeros_like(other.up), np.zeros_like(other.dn))


@dataclass
class FramePack:
    E_up: np.ndarray
    E_dn: np.ndarray
    F_up: np.ndarray
    F_dn: np.ndarray
    eta: np.ndarray

    def E(self, i: int) -> SectionField:
        return SectionField(self.E_up[..., i, :], self.E_dn[..., i, :])

    def Fn(self, i: int) -> SectionField:
        return SectionField(self.F_up[..., i, :], self.F_dn[..., i, :])

    @property
    def n(self) -> int:
        return self.eta.shape[-1]


def build_frames(g: MetricField, F: np.ndarray, eta: np.ndarray | None = None) -> FramePack:
    """Tangent frame ``E_i = d/dz^i (+) F_{ji} dzbar^j`` and normal frame
    ``Fn_i = (-g^{jk} F_{ki} d/dz^j) (+) (g_{li} dzbar^l)``."""
    n = F.shape[-1]
    K = g.inv @ F
    E_up = np.broadcast_to(np.eye(n), F.shape).copy()
    E_dn = np.swapaxes(F, -1, -2).copy()
    F_up = -np.swapaxes(K, -1, -2)
    F_dn = np.swapaxes(g.values, -1, -2).copy()
    if eta is None:
        eta = g.values + F @ g.inv @ F
    return FramePack(E_up, E_dn, F_up, F_dn, eta)


def pairing(Y: SectionField, Z: SectionField, g: MetricField) -> np.ndarray:
    """``<Ybar, Z> = g_{jk} conj(Y^j) Z^k + g^{jk} conj(Y_j) Z_k``."""
    a = np.einsum("...j,...jk,...k->...", np.conj(Y.up), g.values, Z.up)
    b = np.einsum("...j,...jk,...k->...", np.conj(Y.dn), g.inv, Z.dn)
    return a + b


def norm_sq(Y: SectionField, g: MetricField) -> np.ndarray:
    return np.real(pairing(Y, Y, g))


def _frame_pairings(up: np.ndarray, dn: np.ndarray, Y: SectionField, g: MetricField) -> np.ndarray:
    """Vector ``<Xbar_i, Y>`` over frame index ``i``."""
    a = np.einsum("...ij,...jk,...k->...i", np.conj(up), g.values, Y.up)
    b = np.einsum("...ij,...jk,...k->...i", np.conj(dn), g.inv, Y.dn)
    return a + b


def gram(frames: FramePack, g: MetricField) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(<Ebar_i, E_j>, <Ebar_i, Fn_j>, <Fnbar_i, Fn_j>)``."""
    def G(up1, dn1, up2, dn2):
        return np.einsum("...ia,...ab,...jb->...ij", np.conj(up1), g.values, up2) + np.einsum(
            "...ia,...ab,...jb->...ij", np.conj(dn1), g.inv, dn2
        )

    f = frames
    return G(f.E_up, f.E_dn, f.E_up, f.E_dn), G(f.E_up, f.E_dn, f.F_up, f.F_dn), G(f.F_up, f.F_dn, f.F_up, f.F_dn)


def _combine(coef: np.ndarray, up: np.ndarray, dn: np.ndarray) -> SectionField:
    return SectionField(np.einsum("...i,...ik->...k", coef, up), np.einsum("...i,...ik->...k", coef, dn))


def decompose(Y: SectionField, frames: FramePack, g: MetricField) -> tuple[SectionField, SectionField, np.ndarray]:
    """Return ``(Y_top, Y_perp, assoc_vec)``; ``assoc_vec`` holds the (1,0) coefficients of ``Y_top``."""
    eta_inv = np.linalg.inv(frames.eta)
    c = np.einsum("...ij,...j->...i", eta_inv, _frame_pairings(frames.E_up, frames.E_dn, Y, g))
    d = np.einsum("...ij,...j->...i", eta_inv, _frame_pairings(frames.F_up, frames.F_dn, Y, g))
    return _combine(c, frames.E_up, frames.E_dn), _combine(d, frames.F_up, frames.F_dn), c


def mean_curvature_section(g: MetricField, F: np.ndarray, eta: np.ndarray, H: np.ndarray) -> SectionField:
    """``(-g^{-1} F eta^{-1} H) (+) (g eta^{-1} H)``."""
    a = np.linalg.solve(eta, H[..., None])[..., 0]
    up = -np.einsum("...jk,...k->...j", g.inv @ F, a)
    dn = np.einsum("...jk,...k->...j", g.values, a)
    return SectionField(up, dn)


def position_section(phi: np.ndarray, x0, grid: Grid) -> SectionField:
    """``(2 (x - x0)) (+) (0.5 dphi/dx)``."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (grid.n,):
        raise ValueError(f"x0 must have {grid.n} coordinates")
    if np.any(np.abs(x0) > grid.r):
        raise ValueError(f"x0={x0.tolist()} lies outside the box")
    if np.any(np.abs(x0) > grid.r / 4):
        warnings.warn(f"x0={x0.tolist()} lies outside the quarter box", stacklevel=2)
    up = 2.0 * (grid.coords - x0)
    dn = half_grad(np.asarray(phi, dtype=float), grid)
    return SectionField(up, dn)


def covariant_derivative(Y: SectionField, gamma: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """``(nabla_i Y^k, nabla_i Y_kbar)`` with arrays indexed ``[..., i, k]``."""
    dup = np.stack([0.5 * diff(Y.up, grid, (i,)) for i in range(grid.n)], axis=-2)
    ddn = np.stack([0.5 * diff(Y.dn, grid, (i,)) for i in range(grid.n)], axis=-2)
    dup = dup + np.einsum("...kij,...j->...ik", gamma, Y.up)
    return dup, ddn


def div_h(Y: SectionField, g: MetricField, F: np.ndarray, eta: np.ndarray, grid: Grid, gamma=None) -> np.ndarray:
    """``nabla_i Y^k (eta^{-1} g)_{ik} + nabla_i Y_kbar (eta^{-1} F g^{-1})_{ik}``."""
    if gamma is None:
        gamma = christoffel(g, grid)
    dup, ddn = covariant_derivative(Y, gamma, grid)
    eta_inv = np.linalg.inv(eta)
    A = eta_inv @ g.values
    B = eta_inv @ F @ g.inv
    return np.einsum("...ik,...ik->...", dup, A) + np.einsum("...ik,...ik->...", ddn, B)


def div_v(c: np.ndarray, v: np.ndarray, g: MetricField, grid: Grid, gamma=None) -> np.ndarray:
    """``v^{-1} nabla_i (v c^i)`` for a (1,0) vector field ``c``."""
    if gamma is None:
        gamma = christoffel(g, grid)
    vc = v[..., None] * c
    d = sum(0.5 * diff(vc[..., i], grid, (i,)) for i in range(grid.n))
    return d / v + np.einsum("...iij,...j->...", gamma, c)


def D_op(f: np.ndarray, F: np.ndarray, eta: np.ndarray, grid: Grid) -> SectionField:
    """``D f = eta^{-1} df (+) F eta^{-1} df`` with ``df = 0.5 grad f``."""
    a = np.linalg.solve(eta, half_grad(np.asarray(f), grid)[..., None])[..., 0]
    return SectionField(a, np.einsum("...jk,...k->...j", F, a))


def random_section(grid: Grid, seed: int, modes: int = 3, amp: float = 1.0) -> SectionField:
    """Real trigonometric-polynomial section with seeded coefficients."""
    rng = np.random.default_rng(seed)
    x = grid.coords / grid.r
    parts = []
    for _ in range(2 * grid.n):
        val = np.zeros(grid.shape)
        for m in range(1, modes + 1):
            kv = rng.normal(size=grid.n)
            a, b = rng.normal(size=2) / m**2
            phase = np.einsum("...i,i->...", x, kv) * m
            val += a * np.cos(phase) + b * np.sin(phase)
        parts.append(amp * val)
    up = np.stack(parts[: grid.n], axis=-1)
    dn = np.stack(parts[grid.n :], axis=-1)
    return SectionField(up, dn)


@dataclass
class IdentityFields:
    pack: CurvaturePack
    frames: FramePack
    gamma: np.ndarray
    H: np.ndarray
    Hsec: SectionField
    P: SectionField


def identity_fields(phi: np.ndarray, g: MetricField, grid: Grid, x0=None) -> IdentityFields:
    pack = curvature_pack(phi, g, grid)
    frames = build_frames(g, pack.F, pack.eta)
    H = mean_curvature_oneform(pack.theta, grid)
    x0 = np.zeros(grid.n) if x0 is None else x0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        P = position_section(phi, x0, grid)
    return IdentityFields(pack, frames, christoffel(g, grid), H, mean_curvature_section(g, pack.F, pack.eta, H), P)


def residual_divergence(Y: SectionField, fields: IdentityFields, g: MetricField, grid: Grid) -> np.ndarray:
    """``div_v(Y_top~) - div_h Y - <Hbar, Y>``."""
    _, _, c = decompose(Y, fields.frames, g)
    lhs = div_v(c, fields.pack.abs_zeta, g, grid, fields.gamma)
    rhs = div_h(Y, g, fields.pack.F, fields.pack.eta, grid, fields.gamma) + pairing(fields.Hsec, Y, g)
    return np.real(lhs - rhs)


def residual_position_divergence(f: np.ndarray, fields: IdentityFields, g: MetricField, grid: Grid) -> np.ndarray:
    """``div_h(f P) - <(Df)bar, P> - n f``."""
    pk = fields.pack
    lhs = div_h(fields.P.scale(f), g, pk.F, pk.eta, grid, fields.gamma)
    rhs = pairing(D_op(f, pk.F, pk.eta, grid), fields.P, g) + grid.n * f
    return np.real(lhs - rhs)


def residual_position_pairing(fields: IdentityFields, g: MetricField, grid: Grid) -> np.ndarray:
    """``<(D|P|^2)bar, P> - 2 |P_top|^2``."""
    pk = fields.pack
    P2 = norm_sq(fields.P, g)
    top, _, _ = decompose(fields.P, fields.frames, g)
    return np.real(pairing(D_op(P2, pk.F, pk.eta, grid), fields.P, g)) - 2.0 * norm_sq(top, g)


def residual_position_gradient(fields: IdentityFields, g: MetricField, grid: Grid) -> np.ndarray:
    """``|d|P|^2|^2_eta - 4 |P_top|^2``."""
    P2 = norm_sq(fields.P, g)
    d = half_grad(P2, grid)
    lhs = np.einsum("...j,...jk,...k->...", d, np.linalg.inv(fields.pack.eta), d)
    top, _, _ = decompose(fields.P, fields.frames, g)
    return lhs - 4.0 * norm_sq(top, g)


def weighted_identity_sides(f: np.ndarray, alpha: float, fields: IdentityFields, g: MetricField, grid: Grid) -> tuple[float, float]:
    """Both sides of the weighted integral identity with weight ``exp(alpha |P|^2)``."""
    if not grid.periodic:
        edge = ~grid.interior_mask(1)
        if np.any(f[edge] != 0):
            raise ValueError("test function must vanish on the boundary of the box")
    pk = fields.pack
    P2 = norm_sq(fields.P, g)
    w = np.exp(alpha * P2)
    top, _, _ = decompose(fields.P, fields.frames, g)
    integrand_l = (grid.n + np.real(pairing(fields.Hsec, fields.P, g)) + 2.0 * alpha * norm_sq(top, g)) * f * w
    integrand_r = -np.real(pairing(D_op(f, pk.F, pk.eta, grid), fields.P, g)) * w
    return integrate_x(integrand_l, g, grid, pk.abs_zeta), integrate_x(integrand_r, g, grid, pk.abs_zeta)


IDENTITY_TESTS = ("divergence", "position_divergence", "position_pairing", "position_gradient")


def identity_suite_ch4(
    phi: np.ndarray,
    g: MetricField,
    grid: Grid,
    tests=IDENTITY_TESTS,
    f: np.ndarray | None = None,
    Y: SectionField | None = None,
    seed: int = 0,
    x0=None,
    interior_width: int = 4,
) -> dict[str, float]:
    """Max pointwise residual of each selected identity over the interior nodes."""
    fields = identity_fields(phi, g, grid, x0)
    mask = grid.interior_mask(interior_width)
    if f is None:
        f = np.ones(grid.shape)
    report = {}
    for name in tests:
        if name == "divergence":
            res = residual_divergence(random_section(grid, seed) if Y is None else Y, fields, g, grid)
        elif name == "position_divergence":
            res = residual_position_divergence(f, fields, g, grid)
        elif name == "position_pairing":
            res = residual_position_pairing(fields, g, grid)
        elif name == "position_gradient":
            res = residual_position_gradient(fields, g, grid)
        else:
            raise KeyError(f"unknown identity test {name!r}")
        report[name] = float(np.max(np.abs(res[mask])))
    return report
