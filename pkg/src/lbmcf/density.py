"""Gaussian-weighted functionals along a flow: densities, monotonicity and shrinker detection."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .curvature import curvature_pack, laplacian_eta, mean_curvature_oneform, volume_functional
from .flow import Trajectory, scale_flow
from .frames import build_frames, decompose, mean_curvature_section, norm_sq, position_section
from .grid import Grid, MetricField, ball_volume, diff, fiber_volume, integrate_x

DENSITY_COLUMNS = ("t", "tau", "theta_bar", "B", "correction", "C_thm53", "monotone_ok")
VARIANTS = ("cutoff_paper", "cutoff_j", "infinity")


# ---------------------------------------------------------------------------
# Cutoff profile
# ---------------------------------------------------------------------------

def smoothstep(u):
    """``S(u) = 6u^5 - 15u^4 + 10u^3`` on ``[0, 1]``."""
    u = np.asarray(u, dtype=float)
    return u * u * u * (10.0 + u * (-15.0 + 6.0 * u))


def cutoff_profile(s, j: int = 1):
    """Smooth cutoff equal to 1 on ``(-inf, j]``, 0 on ``[j+1, inf)``, decreasing in between."""
    return 1.0 - smoothstep(np.clip(np.asarray(s, dtype=float) - j, 0.0, 1.0))


def cutoff_derivatives(s, j: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivatives of :func:`cutoff_profile`."""
    u = np.asarray(s, dtype=float) - j
    inside = (u > 0) & (u < 1)
    uc = np.clip(u, 0.0, 1.0)
    d1 = np.where(inside, -30.0 * uc**2 * (1 - uc) ** 2, 0.0)
    d2 = np.where(inside, -60.0 * uc * (1 - uc) * (1 - 2 * uc), 0.0)
    return d1, d2


def cutoff_constant() -> float:
    """``C' = max |f'| + |f''|`` for the smoothstep profile.

    By the symmetry ``u -> 1 - u`` it suffices to maximise ``S' + S''`` on ``[0, 1/2]``,
    whose critical points solve ``S'' + S''' = 60 (2u^3 + 3u^2 - 5u + 1) = 0``.
    """
    roots = np.roots([2.0, 3.0, -5.0, 1.0])
    cands = [0.0, 0.5] + [float(z.real) for z in roots if abs(z.imag) < 1e-12 and 0 <= z.real <= 0.5]
    vals = [30 * u**2 * (1 - u) ** 2 + 60 * u * (1 - u) * (1 - 2 * u) for u in cands]
    return float(max(vals))


def c_double_prime(n: int) -> float:
    """``4^{n+3} / pi^{n/2} * max_{x >= 0} x^{n/2} e^{-x}``; the max sits at ``x = n/2``."""
    return 4.0 ** (n + 3) / math.pi ** (n / 2) * (n / 2) ** (n / 2) * math.exp(-n / 2)


def monotonicity_constant(n: int, V0: float, lam: float, r: float) -> float:
    """Additive constant of the monotonicity inequality on a bounded chart."""
    return cutoff_constant() * c_double_prime(n) * V0 * lam ** (-(n + 2)) * r ** (-(n + 2))


# ---------------------------------------------------------------------------
# Translation and point evaluation
# ---------------------------------------------------------------------------

def _value_and_gradient(phi: np.ndarray, x0: np.ndarray, grid: Grid) -> tuple[float, np.ndarray]:
    grads = [diff(phi, grid, (i,)) for i in range(grid.n)]
    node = grid.node_of(x0)
    if node is not None:
        return float(phi[node]), np.array([gi[node] for gi in grads])
    if grid.periodic:
        raise ValueError("off-node centres are not supported in periodic mode")
    axes = (grid.axis,) * grid.n
    pt = np.asarray(x0, dtype=float)[None, :]
    interp = lambda f: float(RegularGridInterpolator(axes, f, method="cubic")(pt)[0])  # noqa: E731
    return interp(phi), np.array([interp(gi) for gi in grads])


def translate_A_Q(phi_t: np.ndarray, phi_ref: np.ndarray, x0, grid: Grid) -> np.ndarray:
    """Subtract the first-order Taylor polynomial of ``phi_ref`` at ``x0`` from ``phi_t``."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if np.any(np.abs(x0) > grid.r):
        raise ValueError("centre lies outside the box")
    val, grad = _value_and_gradient(np.asarray(phi_ref, dtype=float), x0, grid)
    return np.asarray(phi_t, dtype=float) - (val + np.einsum("...i,i->...", grid.coords - x0, grad))


def metric_at(g: MetricField, x0, grid: Grid) -> np.ndarray:
    node = grid.node_of(x0)
    if node is not None or g.constant:
        return g.values[node if node is not None else (0,) * grid.n]
    axes = (grid.axis,) * grid.n
    n = grid.n
    out = np.empty((n, n))
    for a in range(n):
        for b in range(n):
            out[a, b] = RegularGridInterpolator(axes, g.values[..., a, b])(np.asarray(x0)[None, :])[0]
    return out


# ---------------------------------------------------------------------------
# Densities
# ---------------------------------------------------------------------------

@dataclass
class DensityProbe:
    x0: np.ndarray
    T_prime: float
    tau: float
    cutoff: str = "cutoff_paper"
    j: int = 1
    lambda_g: float | None = None

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.cutoff not in VARIANTS:
            raise ValueError(f"unknown cutoff {self.cutoff!r}")


@dataclass
class LocalFields:
    """Everything a density evaluation needs at one time slice (after translation)."""

    P2: np.ndarray
    Ptop2: np.ndarray
    Hsec_up: np.ndarray
    Hsec_dn: np.ndarray
    Pperp_up: np.ndarray
    Pperp_dn: np.ndarray
    abs_zeta: np.ndarray
    eta: np.ndarray


def local_fields(phi_tilde: np.ndarray, g: MetricField, grid: Grid, x0) -> LocalFields:
    pack = curvature_pack(phi_tilde, g, grid)
    frames = build_frames(g, pack.F, pack.eta)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        P = position_section(phi_tilde, x0, grid)
    top, perp, _ = decompose(P, frames, g)
    H = mean_curvature_oneform(pack.theta, grid)
    Hs = mean_curvature_section(g, pack.F, pack.eta, H)
    return LocalFields(norm_sq(P, g), norm_sq(top, g), Hs.up, Hs.dn, perp.up, perp.dn, pack.abs_zeta, pack.eta)


def cutoff_field(P2: np.ndarray, variant: str, lam: float, r: float, j: int = 1) -> np.ndarray:
    Pn = np.sqrt(np.maximum(P2, 0.0))
    if variant == "cutoff_paper":
        return cutoff_profile(4.0 * Pn / (lam * r), 1)
    if variant == "cutoff_j":
        return cutoff_profile(Pn / (2.0 * lam), j)
    return np.ones_like(P2)


def heat_weight(P2: np.ndarray, tau: float, k_exp: float) -> np.ndarray:
    return (4.0 * math.pi * tau) ** (-k_exp) * np.exp(-P2 / (4.0 * tau))


def theta_general(psi: np.ndarray, f: np.ndarray, abs_zeta: np.ndarray, g: MetricField, grid: Grid, tau: float, k_exp: float) -> float:
    """``Vol(B(r')) * int (4 pi tau)^{-k} exp(-psi/(4 tau)) f |zeta| det g dx``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    if np.any(psi < -1e-12):
        raise ValueError("psi must be nonnegative")
    integrand = heat_weight(psi, tau, k_exp) * f
    return ball_volume(grid.n, grid.r_prime) * integrate_x(integrand, g, grid, abs_zeta)


def normalization(g: MetricField, x0, grid: Grid) -> float:
    """``(2 sqrt 2)^n / Vol_g(B(r')_p)``."""
    return (2.0 * math.sqrt(2.0)) ** grid.n / fiber_volume(metric_at(g, x0, grid), grid.r_prime)


def density_bar(
    phi_t: np.ndarray,
    g: MetricField,
    grid: Grid,
    x0,
    tau: float,
    variant: str = "cutoff_paper",
    phi_ref: np.ndarray | None = None,
    j: int = 1,
    literal: bool = False,
) -> float:
    """Gaussian density of the slice ``phi_t`` at centre ``x0`` and scale ``tau = T' - t``.

    ``phi_ref`` is the potential at ``T'`` used for the first-order translation
    (defaults to ``phi_t``). The production formula cancels the fiber volume
    analytically; ``literal=True`` evaluates the uncancelled definition.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if np.any(np.abs(x0) > grid.r / 4):
        warnings.warn(f"probe centre {x0.tolist()} lies outside the quarter box", stacklevel=2)
    phi_tilde = translate_A_Q(phi_t, phi_t if phi_ref is None else phi_ref, x0, grid)
    lf = local_fields(phi_tilde, g, grid, x0)
    f = cutoff_field(lf.P2, variant, g.lambda_g(), grid.r, j)
    n = grid.n
    if literal:
        return normalization(g, x0, grid) * theta_general(lf.P2, f, lf.abs_zeta, g, grid, tau, n / 2)
    g0 = metric_at(g, x0, grid)
    integral = integrate_x(heat_weight(lf.P2, tau, n / 2) * f, g, grid, lf.abs_zeta)
    return 2.0**n / math.sqrt(float(np.linalg.det(g0))) * integral


def tau_schedule(tau0: float, grid: Grid, lam: float = 1.0, max_levels: int = 60) -> tuple[list[float], float]:
    """Geometric ``tau_k = tau0 2^{-k}`` down to the resolution floor (Gaussian width ``< 4h``)."""
    taus = []
    tau = tau0
    for _ in range(max_levels):
        if math.sqrt(tau / 2.0) / lam < 4.0 * grid.h:
            break
        taus.append(tau)
        tau /= 2.0
    return taus, tau


# ---------------------------------------------------------------------------
# Monotonicity along a trajectory
# ---------------------------------------------------------------------------

@dataclass
class MonotonicityReport:
    times: np.ndarray
    tau: np.ndarray
    theta_bar: np.ndarray
    lhs: np.ndarray
    B: np.ndarray
    correction: np.ndarray
    rhs: np.ndarray
    residual: np.ndarray
    C_thm53: float
    bound_ok: np.ndarray
    monotone_ok: np.ndarray
    C_empirical: float
    anchor_time: float
    rows: list[tuple] = field(default_factory=list)


def _slice_terms(phi_tilde, g, grid, x0, tau, variant, j, lam):
    lf = local_fields(phi_tilde, g, grid, x0)
    f = cutoff_field(lf.P2, variant, lam, grid.r, j)
    w = heat_weight(lf.P2, tau, grid.n / 2)
    up = lf.Hsec_up + lf.Pperp_up / (2 * tau)
    dn = lf.Hsec_dn + lf.Pperp_dn / (2 * tau)
    vec = np.einsum("...j,...jk,...k->...", up, g.values, up) + np.einsum("...j,...jk,...k->...", dn, g.inv, dn)
    return lf, f, w, vec


def monotonicity_residual(
    traj: Trajectory,
    x0,
    T_prime: float,
    variant: str = "cutoff_paper",
    j: int = 1,
    stride: int = 1,
    tol_monotone: float = 1e-10,
) -> MonotonicityReport:
    """Both sides of the weighted monotonicity identity at interior snapshots.

    All quantities are reported on the Gaussian-density scale. The translation
    is anchored at ``min(T', t_end)`` so that ``T'`` may lie beyond the
    computed span; subtracting a time-independent affine function maps flows to
    flows, so the identity is unaffected.
    """
    grid, g = traj.grid, traj.g
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    idx = np.arange(0, len(traj), stride)
    if len(idx) < 3:
        raise ValueError("need at least 3 time samples")
    times = traj.times[idx]
    dT = float(times[1] - times[0])
    if np.max(np.abs(np.diff(times) - dT)) > 1e-9 * abs(dT):
        raise ValueError("nonuniform time sampling unsupported")
    if not T_prime > times[-1]:
        raise ValueError("T' must exceed every sampled time")
    anchor = min(T_prime, float(traj.times[-1]))
    phi_ref = traj.phis[traj.index_of(anchor)]
    lam = g.lambda_g()
    norm = normalization(g, x0, grid)
    vol = ball_volume(grid.n, grid.r_prime)

    theta_bar, fields = [], []
    for i in idx:
        phi_tilde = translate_A_Q(traj.phis[i], phi_ref, x0, grid)
        tau = T_prime - traj.times[i]
        lf, f, w, vec = _slice_terms(phi_tilde, g, grid, x0, tau, variant, j, lam)
        theta_bar.append(norm * vol * integrate_x(w * f, g, grid, lf.abs_zeta))
        fields.append((lf, f, w, vec, tau))
    theta_bar = np.array(theta_bar)

    V0 = volume_functional(curvature_pack(traj.phis[0], g, grid).abs_zeta, g, grid)
    C = monotonicity_constant(grid.n, V0, lam, grid.r)
    Cbar = norm * C
    cp = cutoff_constant()
    lhs, B, corr, bound_ok = [], [], [], []
    for m in range(1, len(idx) - 1):
        lf, f, w, vec, tau = fields[m]
        lhs.append((theta_bar[m + 1] - theta_bar[m - 1]) / (2 * dT))
        dfdt = (fields[m + 1][1] - fields[m - 1][1]) / (2 * dT)
        scale = norm * vol
        b = scale * integrate_x(vec * f * w, g, grid, lf.abs_zeta)
        c = scale * integrate_x((dfdt - laplacian_eta(f, lf.eta, grid)) * w, g, grid, lf.abs_zeta)
        B.append(b)
        corr.append(c)
        if variant == "cutoff_j":
            Pn = np.sqrt(lf.P2)
            chi = ((Pn >= 2 * lam * j) & (Pn <= 2 * lam * (j + 1))).astype(float)
            bound = cp / lam**2 * scale * integrate_x(w * chi, g, grid, lf.abs_zeta)
        else:
            bound = Cbar
        bound_ok.append(lhs[-1] <= -b + bound)
    lhs, B, corr = np.array(lhs), np.array(B), np.array(corr)
    rhs = -B + corr
    mono_val = theta_bar + Cbar * (T_prime - times)
    monotone_ok = np.concatenate([[True], np.diff(mono_val) <= tol_monotone])
    inner = slice(1, len(idx) - 1)
    C_emp = float(max(0.0, np.max(lhs + B)))
    rows = []
    for m in range(1, len(idx) - 1):
        rows.append(
            (float(times[m]), float(T_prime - times[m]), float(theta_bar[m]), float(B[m - 1]), float(corr[m - 1]), float(Cbar), bool(monotone_ok[m]))
        )
    return MonotonicityReport(
        times=times[inner],
        tau=T_prime - times[inner],
        theta_bar=theta_bar[inner],
        lhs=lhs,
        B=B,
        correction=corr,
        rhs=rhs,
        residual=np.abs(lhs - rhs),
        C_thm53=float(Cbar),
        bound_ok=np.array(bound_ok),
        monotone_ok=monotone_ok,
        C_empirical=C_emp,
        anchor_time=anchor,
        rows=rows,
    )


# ---------------------------------------------------------------------------
# Scaling and shrinker detection
# ---------------------------------------------------------------------------

def density_scaling_check(traj: Trajectory, x0, T_prime: float, k: float, t: float, T_dd: float | None = None, variant: str = "cutoff_paper") -> tuple[float, float, float]:
    """Density of the rescaled flow at ``(p, k(T' - T''))`` versus the original density at ``(p, T')``.

    Both sides translate with the slice at ``T''`` (which must be a snapshot),
    so the translated flows correspond exactly under the rescaling.
    """
    T_dd = float(traj.times[-1]) if T_dd is None else T_dd
    i_t = traj.index_of(t)
    i_ref = traj.index_of(T_dd)
    scaled = scale_flow(traj, k, T_dd)
    rhs = density_bar(traj.phis[i_t], traj.g, traj.grid, x0, T_prime - t, variant, traj.phis[i_ref])
    s = scaled.times[i_t]
    Tq = k * (T_prime - T_dd)
    lhs = density_bar(scaled.phis[i_t], scaled.g, scaled.grid, x0, Tq - s, variant, scaled.phis[i_ref], literal=True)
    return lhs, rhs, abs(lhs - rhs)


@dataclass
class ShrinkerDetection:
    theta_inf_sup: float
    residual_sup: float
    flagged: bool
    theta_inf: np.ndarray
    residuals: np.ndarray


def shrinker_detect(traj: Trajectory, x0, T_prime: float, window: tuple[int, int] | None = None, tol: float = 1e-6, density_tol: float = 1e-6) -> ShrinkerDetection:
    """Sup of the untruncated density and of the weighted ``L^2`` norm of ``H + P_perp/(2 tau)`` over a window."""
    grid, g = traj.grid, traj.g
    lo, hi = (0, len(traj)) if window is None else window
    if not (0 <= lo < hi <= len(traj)):
        raise ValueError("window outside trajectory span")
    if not T_prime > traj.times[hi - 1]:
        raise ValueError("T' must exceed the window")
    anchor = min(T_prime, float(traj.times[-1]))
    phi_ref = traj.phis[traj.index_of(anchor)]
    lam = g.lambda_g()
    norm = normalization(g, x0, grid)
    vol = ball_volume(grid.n, grid.r_prime)
    dens, res = [], []
    for i in range(lo, hi):
        phi_tilde = translate_A_Q(traj.phis[i], phi_ref, x0, grid)
        tau = T_prime - traj.times[i]
        lf, f, w, vec = _slice_terms(phi_tilde, g, grid, x0, tau, "infinity", 1, lam)
        dens.append(norm * vol * integrate_x(w, g, grid, lf.abs_zeta))
        res.append(math.sqrt(max(0.0, norm * vol * integrate_x(vec * w, g, grid, lf.abs_zeta))))
    dens, res = np.array(dens), np.array(res)
    flagged = bool(res.max() <= tol and dens.max() <= 1.0 + density_tol)
    return ShrinkerDetection(float(dens.max()), float(res.max()), flagged, dens, res)
