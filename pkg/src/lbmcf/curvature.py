"""Pointwise curvature quantities of a graphical hermitian metric."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid, MetricField, NonSPDMetricError, PotentialField, ball_volume, diff, hessian, integrate_x


@dataclass
class CurvaturePack:
    """Per-node curvature data for one potential on one metric."""

    F: np.ndarray
    K: np.ndarray
    lambdas: np.ndarray
    zeta: np.ndarray
    theta: np.ndarray
    abs_zeta: np.ndarray
    eta: np.ndarray

    @property
    def eta_inv(self) -> np.ndarray:
        return np.linalg.inv(self.eta)


def _field_values(phi) -> np.ndarray:
    return phi.values if isinstance(phi, PotentialField) else np.asarray(phi, dtype=float)


def curvature_F(phi, grid: Grid) -> np.ndarray:
    """``F_{jk} = 0.25 * d^2 phi / dx^j dx^k``."""
    return 0.25 * hessian(_field_values(phi), grid)


def _sym_eigvals_2x2(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of ``[[a, b], [b, c]]``."""
    mean = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    return np.stack([mean - rad, mean + rad], axis=-1)


def spectrum_K(g: MetricField, F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(K, lambdas)`` with ``K = g^{-1} F`` and ascending generalized eigenvalues."""
    F = np.asarray(F, dtype=float)
    n = F.shape[-1]
    L = g.chol
    K = g.inv @ F
    if n == 1:
        lam = F[..., 0, :] / g.values[..., 0, :]
        return K, lam
    # symmetric reduction: S = L^{-1} F L^{-T}
    Linv = np.linalg.inv(L)
    S = Linv @ F @ np.swapaxes(Linv, -1, -2)
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    if n == 2:
        lam = _sym_eigvals_2x2(S[..., 0, 0], S[..., 0, 1], S[..., 1, 1])
    else:
        lam = np.linalg.eigvalsh(S)
    return K, lam


def angle_zeta(lambdas: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``theta = sum arctan(lambda)``, ``zeta = prod(1 + i lambda)``, ``|zeta|``."""
    lam = np.asarray(lambdas, dtype=float)
    theta = np.sum(np.arctan(lam), axis=-1)
    zeta = np.prod(1.0 + 1j * lam, axis=-1)
    abs_zeta = np.prod(np.sqrt(1.0 + lam * lam), axis=-1)
    return theta, zeta, abs_zeta


def induced_eta(g: MetricField, F: np.ndarray) -> np.ndarray:
    """``eta = g + F g^{-1} F``; raises when the result is not SPD."""
    eta = g.values + F @ g.inv @ F
    eta = 0.5 * (eta + np.swapaxes(eta, -1, -2))
    try:
        np.linalg.cholesky(eta)
    except np.linalg.LinAlgError:
        ev = np.linalg.eigvalsh(eta)[..., 0]
        bad = np.argwhere(~(ev > 0))
        node = tuple(int(i) for i in bad[0]) if len(bad) else None
        raise NonSPDMetricError("induced metric eta is not positive definite", node) from None
    return eta


def curvature_pack(phi, g: MetricField, grid: Grid) -> CurvaturePack:
    F = curvature_F(phi, grid)
    K, lam = spectrum_K(g, F)
    theta, zeta, abs_zeta = angle_zeta(lam)
    eta = induced_eta(g, F)
    return CurvaturePack(F=F, K=K, lambdas=lam, zeta=zeta, theta=theta, abs_zeta=abs_zeta, eta=eta)


def half_grad(f: np.ndarray, grid: Grid) -> np.ndarray:
    """``d_j f = 0.5 * df/dx^j`` stacked on a trailing axis."""
    return np.stack([0.5 * diff(f, grid, (j,)) for j in range(grid.n)], axis=-1)


def mean_curvature_oneform(theta: np.ndarray, grid: Grid) -> np.ndarray:
    """``H_j = 0.5 * d theta / dx^j``."""
    return half_grad(theta, grid)


def laplacian_eta(f: np.ndarray, eta: np.ndarray, grid: Grid) -> np.ndarray:
    """``0.25 * eta^{jk} d^2 f / dx^j dx^k``."""
    return 0.25 * np.einsum("...jk,...jk->...", np.linalg.inv(eta), hessian(np.asarray(f, dtype=float), grid))


def dhym_residual(theta: np.ndarray, eta: np.ndarray, K: np.ndarray, grid: Grid) -> np.ndarray:
    """``L_eta theta = Delta_eta theta - H^T (K eta^{-1}) H`` with ``H = d theta``.

    ``K eta^{-1} = g^{-1} F eta^{-1}`` is symmetric, so the contraction order is
    immaterial for the quadratic form.
    """
    H = mean_curvature_oneform(theta, grid)
    M = K @ np.linalg.inv(eta)
    return laplacian_eta(theta, eta, grid) - np.einsum("...j,...jk,...k->...", H, M, H)


def volume_functional(abs_zeta: np.ndarray, g: MetricField, grid: Grid, r_prime: float | None = None) -> float:
    """``Vol(B(r')) * int |zeta| det(g) dx``."""
    rp = grid.r_prime if r_prime is None else r_prime
    return ball_volume(grid.n, rp) * integrate_x(abs_zeta, g, grid)


def grad_F_norm_sq(F: np.ndarray, g: MetricField, grid: Grid) -> np.ndarray:
    """``|nabla F|^2_g`` with ``nabla_i F_{jk} = 0.5 d_i F_{jk}`` (constant g)."""
    n = grid.n
    dF = np.stack([0.5 * diff(F, grid, (i,)) for i in range(n)], axis=-3)  # [..., i, j, k]
    gi = g.inv
    return np.einsum("...ia,...jb,...kc,...ijk,...abc->...", gi, gi, gi, dF, dF)
