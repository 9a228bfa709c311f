"""Explicit time integration of ``d phi/dt = theta(phi) - theta_hat``."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .curvature import (
    curvature_F,
    curvature_pack,
    grad_F_norm_sq,
    half_grad,
    laplacian_eta,
    mean_curvature_oneform,
    spectrum_K,
    angle_zeta,
    volume_functional,
)
from .grid import Grid, GridError, MetricField, ball_volume, integrate_x

HISTORY_COLUMNS = ("t", "V", "theta_min", "theta_max", "maxF", "dt")


class FlowAbort(RuntimeError):
    """Integration stopped; ``last_good`` holds the last accepted state."""

    def __init__(self, message: str, last_good: "FlowState | None" = None, node=None):
        super().__init__(message if node is None else f"{message} at node {node}")
        self.last_good = last_good
        self.node = node


@dataclass
class FlowState:
    phi: np.ndarray
    t: float
    theta_hat: float
    history: list[tuple[float, ...]] = field(default_factory=list)


@dataclass
class FlowConfig:
    theta_hat: float | None = None  # None -> average angle of the initial data
    cfl: float = 0.4
    dt: float | None = None  # None -> stable_dt(eta(phi0), cfl)
    n_steps: int = 100
    cadence: int = 1
    maxF_bound: float = 1e6
    phi_bound: float = 1e12
    scheme: str = "euler"


@dataclass
class Trajectory:
    """Snapshots of one flow on a fixed grid and metric."""

    grid: Grid
    g: MetricField
    times: np.ndarray
    phis: np.ndarray  # shape (n_snapshots, *grid.shape)
    theta_hat: float
    dt: float
    history: list[tuple[float, ...]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.times)

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > tol * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not a snapshot time")
        return i


def theta_field(phi: np.ndarray, g: MetricField, grid: Grid) -> np.ndarray:
    _, lam = spectrum_K(g, curvature_F(phi, grid))
    return angle_zeta(lam)[0]


def stable_dt(eta: np.ndarray, grid: Grid, cfl: float = 0.8) -> float:
    """``cfl * h^2 / (n * max spectral radius of eta^{-1}/4)``."""
    rho = np.linalg.eigvalsh(0.25 * np.linalg.inv(eta))[..., -1].max()
    return float(cfl * grid.h**2 / (grid.n * rho))


VELOCITY_ROUNDOFF = 64 * np.finfo(float).eps


def average_angle(phi: np.ndarray, g: MetricField, grid: Grid) -> float:
    """``int theta dmu / int dmu``."""
    pack = curvature_pack(phi, g, grid)
    return integrate_x(pack.theta, g, grid, pack.abs_zeta) / integrate_x(pack.abs_zeta, g, grid)


def _velocity(phi: np.ndarray, theta_hat: float, g: MetricField, grid: Grid) -> np.ndarray:
    v = theta_field(phi, g, grid) - theta_hat
    if not np.all(np.isfinite(v)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(v))[0])
        raise FlowAbort("non-finite angle", node=bad)
    # velocities below the finite-difference roundoff of the Hessian are noise; keep them from accumulating
    floor = VELOCITY_ROUNDOFF * float(np.abs(phi).max()) / grid.h**2
    v[np.abs(v) <= floor] = 0.0
    return v


def step(state: FlowState, dt: float, g: MetricField, grid: Grid, scheme: str = "euler") -> FlowState:
    """One explicit step; returns a new state (the input is not modified)."""
    th = state.theta_hat
    try:
        k1 = _velocity(state.phi, th, g, grid)
        if scheme == "euler":
            phi = state.phi + dt * k1
        elif scheme == "rk2":
            k2 = _velocity(state.phi + dt * k1, th, g, grid)
            phi = state.phi + 0.5 * dt * (k1 + k2)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
    except FlowAbort as exc:
        raise FlowAbort(str(exc), last_good=state) from None
    return FlowState(phi=phi, t=state.t + dt, theta_hat=th, history=state.history)


def history_row(phi: np.ndarray, t: float, dt: float, g: MetricField, grid: Grid) -> tuple[float, ...]:
    pack = curvature_pack(phi, g, grid)
    V = volume_functional(pack.abs_zeta, g, grid)
    maxF = float(np.max(np.abs(pack.F)))
    return (float(t), V, float(pack.theta.min()), float(pack.theta.max()), maxF, float(dt))


def run(phi0, g: MetricField, grid: Grid, config: FlowConfig, t0: float = 0.0) -> Trajectory:
    """Integrate ``config.n_steps`` steps, recording a snapshot every ``config.cadence`` steps."""
    phi0 = np.asarray(getattr(phi0, "values", phi0), dtype=float)
    if phi0.shape != grid.shape or g.values.shape[: grid.n] != grid.shape:
        raise GridError("potential, metric and grid shapes disagree")
    if config.cadence < 1 or config.n_steps < 0:
        raise ValueError("cadence must be >= 1 and n_steps >= 0")
    theta_hat = average_angle(phi0, g, grid) if config.theta_hat is None else float(config.theta_hat)
    pack = curvature_pack(phi0, g, grid)
    dt = stable_dt(pack.eta, grid, config.cfl) if config.dt is None else float(config.dt)
    state = FlowState(phi=phi0.copy(), t=float(t0), theta_hat=theta_hat)
    times, phis, history = [state.t], [state.phi.copy()], [history_row(state.phi, state.t, dt, g, grid)]
    for k in range(1, config.n_steps + 1):
        new = step(state, dt, g, grid, config.scheme)
        # keep times on the exact lattice t0 + k*dt
        new.t = t0 + k * dt
        if not np.all(np.abs(new.phi) <= config.phi_bound):
            raise FlowAbort("potential exceeded bound", last_good=state)
        if k % config.cadence == 0 or k == config.n_steps:
            row = history_row(new.phi, new.t, dt, g, grid)
            if not row[4] <= config.maxF_bound:
                raise FlowAbort(f"max|F| = {row[4]:.3g} exceeded guard {config.maxF_bound:.3g}", last_good=state)
            times.append(new.t)
            phis.append(new.phi.copy())
            history.append(row)
        state = new
    return Trajectory(grid=grid, g=g, times=np.array(times), phis=np.array(phis), theta_hat=theta_hat, dt=dt, history=history)


def _uniform_spacing(times: np.ndarray) -> float:
    d = np.diff(times)
    if len(d) == 0 or np.max(np.abs(d - d[0])) > 1e-9 * abs(d[0]):
        raise ValueError("snapshot times must be uniformly spaced")
    return float(d[0])


@dataclass
class FlowDiagnostics:
    times: np.ndarray
    dVdt_fd: np.ndarray
    dVdt_formula: np.ndarray
    first_variation_rel: np.ndarray
    heat_residual: np.ndarray
    heat_residual_interior: np.ndarray
    oneform_residual: np.ndarray


def flow_diagnostics(traj: Trajectory, interior_width: int = 2) -> FlowDiagnostics:
    """First variation of volume, ``d_t theta = Delta_eta theta`` and ``d(du/dt) = H`` at interior snapshots."""
    if len(traj) < 3:
        raise ValueError("flow diagnostics need at least 3 snapshots")
    grid, g = traj.grid, traj.g
    dT = _uniform_spacing(traj.times)
    packs = [curvature_pack(p, g, grid) for p in traj.phis]
    V = np.array([volume_functional(p.abs_zeta, g, grid) for p in packs])
    mask = grid.interior_mask(interior_width)
    out = {k: [] for k in ("fd", "formula", "rel", "heat", "heat_in", "oneform")}
    for i in range(1, len(traj) - 1):
        pk = packs[i]
        fd = (V[i + 1] - V[i - 1]) / (2 * dT)
        udot = pk.theta - traj.theta_hat
        du = half_grad(udot, grid)
        H = mean_curvature_oneform(pk.theta, grid)
        pair = np.einsum("...j,...jk,...k->...", du, np.linalg.inv(pk.eta), H)
        formula = -ball_volume(grid.n, grid.r_prime) * integrate_x(pair, g, grid, pk.abs_zeta)
        out["fd"].append(fd)
        out["formula"].append(formula)
        out["rel"].append(abs(fd - formula) / max(abs(formula), 1e-300))
        dth = (packs[i + 1].theta - packs[i - 1].theta) / (2 * dT)
        res = np.abs(dth - laplacian_eta(pk.theta, pk.eta, grid))
        out["heat"].append(float(res.max()))
        out["heat_in"].append(float(res[mask].max()))
        udot_fd = (traj.phis[i + 1] - traj.phis[i - 1]) / (2 * dT)
        out["oneform"].append(float(np.abs(half_grad(udot_fd, grid) - H).max()))
    return FlowDiagnostics(
        times=traj.times[1:-1],
        dVdt_fd=np.array(out["fd"]),
        dVdt_formula=np.array(out["formula"]),
        first_variation_rel=np.array(out["rel"]),
        heat_residual=np.array(out["heat"]),
        heat_residual_interior=np.array(out["heat_in"]),
        oneform_residual=np.array(out["oneform"]),
    )


def scale_flow(traj: Trajectory, k: float, T_prime: float) -> Trajectory:
    """``D_k^{T'}``: ``g -> k g``, ``phi_s = k phi(T' + s/k)`` sampled at ``s = k (t - T')``."""
    if k <= 0:
        raise ValueError("scale factor must be positive")
    if not traj.times[0] - 1e-12 <= T_prime <= traj.times[-1] + 1e-12:
        raise ValueError(f"T'={T_prime} outside trajectory span [{traj.times[0]}, {traj.times[-1]}]")
    return replace(
        traj,
        g=traj.g.scaled(k),
        times=k * (traj.times - T_prime),
        phis=k * traj.phis,
        theta_hat=traj.theta_hat,
        dt=k * traj.dt,
        history=[],
    )


def grad_F_ratio(traj: Trajectory, scaled: Trajectory, index: int) -> float:
    """``max |nabla F|^2`` on the scaled flow divided by the unscaled one at a shared snapshot."""
    a = grad_F_norm_sq(curvature_F(traj.phis[index], traj.grid), traj.g, traj.grid)
    b = grad_F_norm_sq(curvature_F(scaled.phis[index], scaled.grid), scaled.g, scaled.grid)
    return float(b.max() / a.max())
