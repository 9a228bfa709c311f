"""Self-similar solutions: residual operators, family checks and a Liouville consistency probe."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .curvature import curvature_pack, half_grad, mean_curvature_oneform
from .grid import Grid, MetricField, PotentialField, hessian, integrate_x

SHRINKER_COLUMNS = ("t", "vector_residual_L2", "scalar_residual_max", "fit_residual")


class FamilyCheckFailed(RuntimeError):
    """The self-similar family check did not pass, so the Liouville probe is not applicable."""


@dataclass(frozen=True)
class ShrinkerSpec:
    lambda_coef: float
    theta0: float = 0.0
    phi0: float = 0.0

    @property
    def kind(self) -> str:
        if self.lambda_coef < 0:
            return "self-shrinker"
        if self.lambda_coef > 0:
            return "self-expander"
        return "stationary"


def quadratic_potential(A, b: float, grid: Grid) -> PotentialField:
    """``phi = b + a_ij x^i x^j``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape != (grid.n, grid.n):
        raise ValueError(f"A has shape {A.shape}, expected ({grid.n}, {grid.n})")
    if not np.array_equal(A, A.T):
        raise ValueError("A must be symmetric")
    x = grid.coords
    return PotentialField(b + np.einsum("...i,ij,...j->...", x, A, x))


def value_at_origin(f: np.ndarray, grid: Grid) -> float:
    """Value at ``x = 0``: the node value when 0 is a node, else tensor quadratic interpolation."""
    if grid.r <= 0 or grid.axis[0] > 0 or grid.axis[-1] < 0:
        raise ValueError("origin outside grid")
    idx = []
    weights = []
    for _ in range(grid.n):
        i = int(np.argmin(np.abs(grid.axis)))
        if abs(grid.axis[i]) <= 1e-14 * grid.r:
            idx.append([i])
            weights.append(np.array([1.0]))
            continue
        i = min(max(i, 1), grid.N - 2)
        if i == 0 or i == grid.N - 1:
            raise ValueError("origin is not an interior point")
        nodes = grid.axis[i - 1 : i + 2]
        w = np.array(
            [np.prod([(0.0 - nodes[m]) / (nodes[k] - nodes[m]) for m in range(3) if m != k]) for k in range(3)]
        )
        idx.append([i - 1, i, i + 1])
        weights.append(w)
    sub = f[np.ix_(*idx)]
    for w in weights:
        sub = np.tensordot(w, sub, axes=(0, 0))
    return float(sub)


def shrinker_residual(phi, g: MetricField, grid: Grid, lam: float, mode: str = "scalar") -> np.ndarray:
    """Pointwise residual of the self-similarity equation with coefficient ``lam``.

    ``scalar``: ``theta - 2 lam (phi - phi(0) - x.grad(phi)/2) - theta(0)``.
    ``vector``: eta-norm of ``H - lam (-2 F x + 0.5 grad(phi))``.
    """
    phi = np.asarray(getattr(phi, "values", phi), dtype=float)
    pack = curvature_pack(phi, g, grid)
    x = grid.coords
    if mode == "scalar":
        dphi = 2.0 * half_grad(phi, grid)
        S = phi - value_at_origin(phi, grid) - 0.5 * np.einsum("...k,...k->...", x, dphi)
        return pack.theta - 2.0 * lam * S - value_at_origin(pack.theta, grid)
    if mode == "vector":
        H = mean_curvature_oneform(pack.theta, grid)
        target = -2.0 * np.einsum("...ik,...k->...i", pack.F, x) + half_grad(phi, grid)
        res = H - lam * target
        return np.sqrt(np.einsum("...i,...ij,...j->...", res, np.linalg.inv(pack.eta), res))
    raise ValueError(f"unknown mode {mode!r}")


def affinity_defect(phi, g: MetricField, grid: Grid, lams=(-1.0, 0.5, 2.0)) -> float:
    """Max deviation of the middle scalar residual from the line through the outer two."""
    l1, l2, l3 = lams
    r1, r2, r3 = (shrinker_residual(phi, g, grid, lam, "scalar") for lam in (l1, l2, l3))
    interp = r1 + (l2 - l1) / (l3 - l1) * (r3 - r1)
    return float(np.max(np.abs(r2 - interp)))


@dataclass
class FamilyReport:
    times: np.ndarray
    vector_residual_L2: np.ndarray
    scalar_residual_max: np.ndarray
    spreads: np.ndarray  # per sampled x, max over components
    sample_points: np.ndarray
    passed: bool
    tol: float
    rows: list[tuple] = field(default_factory=list)

    @property
    def residual(self) -> float:
        return float(max(self.vector_residual_L2.max(), self.spreads.max(initial=0.0)))


def _interior_weight(grid: Grid, frac: float) -> np.ndarray:
    return (np.max(np.abs(grid.coords), axis=-1) <= frac * grid.r).astype(float)


def self_similar_family_check(
    times,
    phis,
    g: MetricField,
    grid: Grid,
    samples=None,
    tol: float = 1e-6,
    frac: float = 0.75,
) -> FamilyReport:
    """Check ``H = P_perp/(2t)`` on each slice and the constancy of ``psi(sqrt(-t) x, t)``.

    ``psi`` runs over the second derivatives of ``phi``; ``samples`` are points ``x``
    (default: a small lattice in the unit box, shrunk so ``sqrt(-t) x`` stays inside the trusted box).
    """
    times = np.asarray(times, dtype=float)
    if np.any(times >= 0):
        raise ValueError("family times must all be negative")
    phis = np.asarray(phis, dtype=float)
    if samples is None:
        pts = np.linspace(-1.0, 1.0, 5) * min(1.0, frac * grid.r / float(np.sqrt(-times.min())))
        samples = np.array(np.meshgrid(*([pts] * grid.n), indexing="ij")).reshape(grid.n, -1).T
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if np.max(np.sqrt(-times)) * np.max(np.abs(samples)) > frac * grid.r:
        raise ValueError("scaled sample points leave the trusted region")
    mask = _interior_weight(grid, frac)
    axes = (grid.axis,) * grid.n
    vec, scal, psi_vals = [], [], []
    for t, phi in zip(times, phis):
        lam = 1.0 / (2.0 * t)
        rv = shrinker_residual(phi, g, grid, lam, "vector")
        rs = shrinker_residual(phi, g, grid, lam, "scalar")
        vec.append(np.sqrt(integrate_x(rv**2 * mask, None, grid)))
        scal.append(float(np.max(np.abs(rs[mask > 0]))))
        hess = hessian(phi, grid)
        pts = np.sqrt(-t) * samples
        vals = np.empty((len(samples), grid.n, grid.n))
        for a in range(grid.n):
            for b in range(grid.n):
                vals[:, a, b] = RegularGridInterpolator(axes, hess[..., a, b], method="cubic")(pts)
        psi_vals.append(vals)
    psi_vals = np.array(psi_vals)
    spreads = (psi_vals.max(axis=0) - psi_vals.min(axis=0)).reshape(len(samples), -1).max(axis=1)
    vec, scal = np.array(vec), np.array(scal)
    passed = bool(vec.max() <= tol and spreads.max() <= tol)
    rows = [(float(t), float(v), float(s), float("nan")) for t, v, s in zip(times, vec, scal)]
    return FamilyReport(times, vec, scal, spreads, samples, passed, tol, rows)


@dataclass
class LiouvilleVerdict:
    fit_residual: float
    threshold: float
    consistent: bool
    coefficients: np.ndarray
    note: str = "finite-window consistency check; ancient-solution hypothesis is not verifiable numerically"


def quadratic_fit(phi: np.ndarray, grid: Grid) -> tuple[np.ndarray, float]:
    """Least-squares fit in the basis ``{1, x_i x_j (i <= j)}``; returns coefficients and relative sup residual."""
    x = grid.coords.reshape(-1, grid.n)
    cols = [np.ones(len(x))]
    for i in range(grid.n):
        for j in range(i, grid.n):
            cols.append(x[:, i] * x[:, j])
    M = np.stack(cols, axis=1)
    if np.linalg.cond(M) > 1e12:
        raise ValueError("quadratic fit is ill-conditioned on this domain")
    y = np.asarray(phi, dtype=float).ravel()
    coef, *_ = np.linalg.lstsq(M, y, rcond=None)
    scale = np.max(np.abs(y))
    res = 0.0 if scale == 0 else float(np.max(np.abs(M @ coef - y)) / scale)
    return coef, res


def liouville_probe(report: FamilyReport, phi_last: np.ndarray, grid: Grid) -> LiouvilleVerdict:
    """Fit a centred quadratic to the last slice of a family that passed :func:`self_similar_family_check`."""
    if not report.passed:
        raise FamilyCheckFailed(f"family residual {report.residual:.3g} exceeds tolerance {report.tol:.3g}")
    coef, res = quadratic_fit(phi_last, grid)
    threshold = max(10.0 * report.residual, 1e-12)
    return LiouvilleVerdict(res, threshold, res <= threshold, coef)
