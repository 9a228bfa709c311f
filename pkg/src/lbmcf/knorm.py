"""Parabolic distances, the partial C^{3,alpha} quantity, parabolic rescaling and K_{3,alpha}.

Metrics here are constant ``n x n`` matrices (or ``None`` for the Euclidean
chart metric). The background metric that defines unit balls is Euclidean.
Pairs ``(g, f)`` are sampled on a spatial grid at uniformly spaced times.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .grid import Grid, diff

KNORM_COLUMNS = ("Qx", "Qt", "K", "dist", "product")
EPS_COLUMNS = ("seed", "sup_density_excess", "supF", "K3aV", "dist_used")

LOG2_LO, LOG2_HI, BISECT_ITERS = -40, 40, 60
MAX_HOLDER_NODES = 4096
ROUNDOFF = 256 * np.finfo(float).eps


def _metric(g, n: int) -> np.ndarray:
    if g is None:
        return None
    m = np.atleast_2d(np.asarray(g, dtype=float))
    if m.shape != (n, n):
        raise ValueError(f"metric shape {m.shape} does not match dimension {n}")
    return m


def spatial_dist(x1, x2, g=None) -> float:
    """``d_g`` between two chart points on a common fiber; ``g=None`` is Euclidean."""
    dx = np.atleast_1d(np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float))
    G = _metric(g, dx.size)
    if G is None:
        return float(np.sqrt(dx @ dx))
    return float(np.sqrt(2.0 * dx @ G @ dx))


def parabolic_dist(Q1, Q2, g=None) -> float:
    """``max(d_g(p, p'), sqrt|t - t'|)`` for ``Q = (x, t)``."""
    (x1, t1), (x2, t2) = Q1, Q2
    return max(spatial_dist(x1, x2, g), math.sqrt(abs(t1 - t2)))


@dataclass(frozen=True)
class Region:
    """``V = U x [a, b)`` with ``U`` the box ``lo <= x <= hi``."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    a: float
    b: float

    def __post_init__(self) -> None:
        if len(self.lo) != len(self.hi) or any(l >= h for l, h in zip(self.lo, self.hi)):
            raise ValueError("region box must be nonempty")
        if not self.a < self.b:
            raise ValueError("region needs a < b")

    def contains(self, Q) -> bool:
        x, t = Q
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi) and self.a <= t < self.b)

    def scaled(self, lam: float, t0: float) -> "Region":
        return Region(self.lo, self.hi, lam * (self.a - t0), lam * (self.b - t0))


def boundary_dist(Q, V: Region, g=None) -> float:
    """``min(dist_g(p, U^c), sqrt(b - t), sqrt(t - a))``."""
    if not V.contains(Q):
        raise ValueError(f"point {Q} is not in the region")
    x, t = Q
    x = np.atleast_1d(np.asarray(x, dtype=float))
    G = _metric(g, x.size)
    # distance to the face x_i = c in the metric 2g is |c - x_i| / sqrt((2g)^{-1}_ii)
    scale = np.ones(x.size) if G is None else np.sqrt(np.diag(np.linalg.inv(2.0 * G)))
    faces = np.minimum(x - np.asarray(V.lo), np.asarray(V.hi) - x) / scale
    return float(min(faces.min(), math.sqrt(V.b - t), math.sqrt(t - V.a)))


# ---------------------------------------------------------------------------
# Pairs
# ---------------------------------------------------------------------------

@dataclass
class KPair:
    """A constant metric and a function sampled at uniformly spaced times."""

    grid: Grid
    g: np.ndarray
    times: np.ndarray
    fs: np.ndarray  # shape (n_times, *grid.shape)
    region: Region
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.g = _metric(self.g, self.grid.n)
        self.times = np.asarray(self.times, dtype=float)
        self.fs = np.asarray(self.fs, dtype=float)
        if self.fs.shape != (len(self.times),) + self.grid.shape:
            raise ValueError("samples do not match grid and time axis")
        if len(self.times) < 2:
            raise ValueError("need at least two time samples")
        d = np.diff(self.times)
        if np.max(np.abs(d - d[0])) > 1e-9 * abs(d[0]):
            raise ValueError("times must be uniformly spaced")

    @classmethod
    def from_samples(cls, grid: Grid, g, times, fs, region: Region | None = None) -> "KPair":
        times = np.asarray(times, dtype=float)
        if region is None:
            dt = times[1] - times[0]
            region = Region((-grid.r,) * grid.n, (grid.r,) * grid.n, float(times[0]), float(times[-1] + dt))
        return cls(grid, g, times, fs, region)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def time_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t), abs(self.dt)):
            raise ValueError(f"time {t} is not a sample time")
        return i

    def derivative_fields(self) -> dict[str, np.ndarray]:
        """``|d_t f|``, ``d_t nabla f`` and ``nabla^3 f`` with ``nabla = 0.5 d/dx`` (constant metric)."""
        if "deriv" in self._cache:
            return self._cache["deriv"]
        grid, n = self.grid, self.grid.n
        ft = np.gradient(self.fs, self.dt, axis=0, edge_order=2) if len(self.times) > 2 else np.gradient(self.fs, self.dt, axis=0)
        ftx = np.stack([0.5 * _diff_t(ft, grid, (i,)) for i in range(n)], axis=-1)
        third = np.empty(self.fs.shape + (n, n, n))
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    third[..., i, j, k] = 0.125 * _diff_t(self.fs, grid, (i, j, k))
        # entries at the stencil roundoff level are zeroed so polynomial data of low degree gives exact zeros
        fmax = float(np.max(np.abs(self.fs)))
        h, dt = grid.h, abs(self.dt)
        ft = _floor(ft, ROUNDOFF * fmax / dt)
        ftx = _floor(ftx, ROUNDOFF * fmax / (dt * h))
        third = _floor(third, ROUNDOFF * fmax / h**3)
        gi = np.linalg.inv(self.g)
        ftx_norm = np.sqrt(np.einsum("...i,ij,...j->...", ftx, gi, ftx))
        third_norm = np.sqrt(np.einsum("...ijk,ia,jb,kc,...abc->...", third, gi, gi, gi, third))
        out = {"ft": np.abs(ft), "ftx": ftx, "third": third, "ftx_norm": ftx_norm, "third_norm": third_norm}
        self._cache["deriv"] = out
        return out


def _floor(a: np.ndarray, level: float) -> np.ndarray:
    return np.where(np.abs(a) <= level, 0.0, a)


def _diff_t(fs: np.ndarray, grid: Grid, axes) -> np.ndarray:
    """Spatial derivative applied to every time slice."""
    moved = np.moveaxis(fs, 0, -1)
    return np.moveaxis(diff(moved, grid, axes), -1, 0)


def scale_pair(pair: KPair, lam: float, t0: float) -> KPair:
    """``D_lam^{t0}``: ``g -> lam g``, ``f_lam(., s) = lam f(., t0 + s/lam)`` sampled at ``s = lam (t - t0)``."""
    if not lam > 0:
        raise ValueError("scale must be positive")
    return KPair(pair.grid, lam * pair.g, lam * (pair.times - t0), lam * pair.fs, pair.region.scaled(lam, t0))


# ---------------------------------------------------------------------------
# Norm and K
# ---------------------------------------------------------------------------

def _spatial_window(pair: KPair, p0) -> np.ndarray:
    x = pair.grid.coords
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    inside_ball = np.sum((x - p0) ** 2, axis=-1) < 1.0
    inside_U = np.all((x >= np.asarray(pair.region.lo)) & (x <= np.asarray(pair.region.hi)), axis=-1)
    return inside_ball & inside_U


def _time_window(pair: KPair, i0: int, lam: float) -> tuple[int, int]:
    """Indices ``i`` with ``|i - i0| dt lam < 1`` and ``a <= t_i < b``."""
    width = pair.dt * lam
    m = len(pair.times)
    lo, hi = i0, i0
    while lo - 1 >= 0 and (i0 - lo + 1) * width < 1.0:
        lo -= 1
    while hi + 1 < m and (hi + 1 - i0) * width < 1.0:
        hi += 1
    valid = np.nonzero((pair.times >= pair.region.a) & (pair.times < pair.region.b))[0]
    if len(valid) == 0:
        return i0, i0 - 1
    return max(lo, int(valid[0])), min(hi, int(valid[-1]))


def _holder_sups(pair: KPair, p0, lo: int, hi: int, alpha: float, seed: int = 0) -> tuple[float, float]:
    key = ("holder", tuple(np.atleast_1d(np.asarray(p0, dtype=float)).tolist()), lo, hi, alpha)
    if key in pair._cache:
        return pair._cache[key]
    d = pair.derivative_fields()
    smask = _spatial_window(pair, p0)
    xs = pair.grid.coords[smask]
    ts = pair.times[lo : hi + 1]
    X = np.repeat(xs[None], len(ts), axis=0).reshape(-1, pair.grid.n)
    T = np.repeat(ts, len(xs))
    A = d["ftx"][lo : hi + 1][:, smask].reshape(len(X), -1)
    B = d["third"][lo : hi + 1][:, smask].reshape(len(X), -1)
    if len(X) > MAX_HOLDER_NODES:
        pick = np.sort(np.random.default_rng(seed).choice(len(X), MAX_HOLDER_NODES, replace=False))
        X, T, A, B = X[pick], T[pick], A[pick], B[pick]
    # whiten so every metric norm becomes Euclidean: |v|_G = |L^T v| with G = L L^T
    La = np.linalg.cholesky(np.linalg.inv(pair.g))
    Lb = np.kron(np.kron(La, La), La)
    Xw, Aw, Bw = X @ np.linalg.cholesky(2.0 * pair.g), A @ La, B @ Lb
    best_a = best_b = 0.0
    chunk = 1024
    for s in range(0, len(X), chunk):
        dist = np.maximum(cdist(Xw[s : s + chunk], Xw), np.sqrt(np.abs(T[s : s + chunk, None] - T[None, :])))
        ok = dist > 0
        if not np.any(ok):
            continue
        denom = np.where(ok, dist, 1.0) ** alpha
        best_a = max(best_a, float(np.max(np.where(ok, cdist(Aw[s : s + chunk], Aw) / denom, 0.0))))
        best_b = max(best_b, float(np.max(np.where(ok, cdist(Bw[s : s + chunk], Bw) / denom, 0.0))))
    pair._cache[key] = (best_a, best_b)
    return best_a, best_b


def _window_terms(pair: KPair, p0, lo: int, hi: int) -> tuple[np.ndarray, np.ndarray]:
    key = ("terms", tuple(np.atleast_1d(np.asarray(p0, dtype=float)).tolist()), lo, hi)
    if key not in pair._cache:
        d = pair.derivative_fields()
        smask = _spatial_window(pair, p0)
        a = d["ft"][lo : hi + 1][:, smask].ravel()
        c = (d["ftx_norm"] + d["third_norm"])[lo : hi + 1][:, smask].ravel()
        pair._cache[key] = (a, c)
    return pair._cache[key]


def scaled_norm(pair: KPair, Q, alpha: float, lam: float = 1.0) -> float:
    """``|D_lam^{t0}(g, f)|_{3,alpha}(p0, 0)`` evaluated in the unscaled coordinates of ``pair``.

    The rescaled pair has ``|d_t f|`` unchanged, first-order-in-space terms
    multiplied by ``lam^{-1/2}``, Hoelder quotients by ``lam^{-(1+alpha)/2}``,
    and its unit time window pulls back to ``|t - t0| < 1/lam``.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    p0, t0 = Q
    i0 = pair.time_index(t0)
    if not pair.region.contains((p0, pair.times[i0])):
        raise ValueError("probe point outside region")
    lo, hi = _time_window(pair, i0, lam)
    if hi < lo or not np.any(_spatial_window(pair, p0)):
        raise ValueError("B(Q) intersected with V is empty")
    a, c = _window_terms(pair, p0, lo, hi)
    first = float(np.max(a + lam**-0.5 * c))
    ha, hb = _holder_sups(pair, p0, lo, hi, alpha)
    return first + lam ** (-(1.0 + alpha) / 2.0) * (ha + hb)


def partial_c3a_norm(pair: KPair, Q, alpha: float) -> float:
    return scaled_norm(pair, Q, alpha, 1.0)


@dataclass
class KResult:
    K: float
    status: str  # zero | bracketed | infinite | range_exhausted | below_range
    rel_tol: float
    non_monotone: bool = False


def K3a(pair: KPair, Q, alpha: float) -> KResult:
    """``inf{ sqrt(lam) : |D_lam(g, f)|_{3,alpha}(p0, 0) <= 1 }`` by log-grid bracketing and bisection."""
    if scaled_norm(pair, Q, alpha, 1.0) == 0.0:
        return KResult(0.0, "zero", 0.0)
    ells = np.arange(LOG2_LO, LOG2_HI + 1, dtype=float)
    vals = np.array([scaled_norm(pair, Q, alpha, 2.0**l) for l in ells])
    adm = vals <= 1.0
    if not adm.any():
        # the d_t f term does not scale; if it alone exceeds 1 no lam can help
        p0, t0 = Q
        i0 = pair.time_index(t0)
        lo, hi = _time_window(pair, i0, 2.0**LOG2_HI)
        a, _ = _window_terms(pair, p0, lo, hi)
        status = "infinite" if a.max() > 1.0 else "range_exhausted"
        return KResult(math.inf, status, 0.0)
    if adm[0]:
        return KResult(2.0 ** (LOG2_LO / 2), "below_range", 0.0, non_monotone=not adm.all())
    # largest coarse lam with norm > 1 that is followed by an admissible one
    bad = np.nonzero(~adm[:-1] & adm[1:])[0]
    k = int(bad[-1])
    non_mono = bool(adm[:k].any() or not adm[k + 1 :].all())
    lo, hi = ells[k], ells[k + 1]
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if scaled_norm(pair, Q, alpha, 2.0**mid) <= 1.0:
            hi = mid
        else:
            lo = mid
    rel = max(hi - lo, 8.0 * np.spacing(abs(hi) if hi != 0 else 1.0)) * math.log(2.0) / 2.0
    return KResult(float(2.0 ** (hi / 2.0)), "bracketed", float(rel), non_mono)


@dataclass
class K3aVResult:
    value: float
    dist_used: float
    rows: list[tuple]
    max_rel_tol: float


def probe_lattice(pair: KPair, points_per_axis: int = 3, time_stride: int = 1, margin: float = 0.25) -> list[tuple]:
    """Deterministic lattice of probe points inside ``V`` (spatially shrunk by ``margin``)."""
    V = pair.region
    axes = [np.linspace(l + margin * (h - l), h - margin * (h - l), points_per_axis) for l, h in zip(V.lo, V.hi)]
    pts = np.array(np.meshgrid(*axes, indexing="ij")).reshape(pair.grid.n, -1).T
    snapped = [np.array([pair.grid.axis[i] for i in pair.grid.nearest_node(p)]) for p in pts]
    times = [t for t in pair.times[::time_stride] if V.a < t < V.b]
    return [(tuple(p.tolist()), float(t)) for p in snapped for t in times]


def K3aV(pair: KPair, alpha: float, lattice=None, threads: int = 1) -> K3aVResult:
    """``sup_Q dist_g(Q, V) K_{3,alpha}(Q)`` over a probe lattice; rows are ``(Qx, Qt, K, dist, product)``."""
    lattice = probe_lattice(pair) if lattice is None else lattice
    if not lattice:
        raise ValueError("empty probe lattice")
    pair.derivative_fields()

    def one(Q):
        res = K3a(pair, Q, alpha)
        dist = boundary_dist(Q, pair.region, pair.g)
        prod = 0.0 if res.K == 0.0 else dist * res.K
        return Q, res, dist, prod

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, lattice))
    else:
        results = [one(Q) for Q in lattice]
    rows = []
    best, best_dist, tol = 0.0, 0.0, 0.0
    for Q, res, dist, prod in results:
        rows.append((Q[0], Q[1], float(res.K), float(dist), float(prod)))
        tol = max(tol, res.rel_tol)
        if prod > best:
            best, best_dist = prod, dist
    return K3aVResult(best, best_dist, rows, tol)


def composition_defect(pair: KPair, lam: float, kappa: float, t0: float, s0: float) -> float:
    """Max difference between ``D_lam^{s0} D_kappa^{t0}`` and ``D_{lam kappa}^{t0 + s0/kappa}`` (metric, times, values)."""
    a = scale_pair(scale_pair(pair, kappa, t0), lam, s0)
    b = scale_pair(pair, lam * kappa, t0 + s0 / kappa)
    return float(
        max(
            np.max(np.abs(a.g - b.g)),
            np.max(np.abs(a.times - b.times)),
            np.max(np.abs(a.fs - b.fs)),
            abs(a.region.a - b.region.a),
            abs(a.region.b - b.region.b),
        )
    )


# ---------------------------------------------------------------------------
# Epsilon-regularity probe
# ---------------------------------------------------------------------------

def pair_from_trajectory(traj, region: Region | None = None) -> KPair:
    """``(g, phi)`` along a flow; the metric must be constant."""
    if not traj.g.constant:
        raise ValueError("K-norm evaluation needs a constant metric")
    g0 = traj.g.values[(0,) * traj.grid.n]
    return KPair.from_samples(traj.grid, g0, traj.times, traj.phis, region)


def _sup_F(traj, pair: KPair) -> float:
    from .curvature import curvature_F

    inU = np.all((traj.grid.coords >= np.asarray(pair.region.lo)) & (traj.grid.coords <= np.asarray(pair.region.hi)), axis=-1)
    gi = np.linalg.inv(pair.g)
    best = 0.0
    for t, phi in zip(traj.times, traj.phis):
        if not pair.region.a <= t < pair.region.b:
            continue
        F = curvature_F(phi, traj.grid)
        nrm = np.sqrt(np.maximum(np.einsum("ab,...bc,cd,...da->...", gi, F, gi, F), 0.0))
        best = max(best, float(nrm[inU].max()))
    return best


def _density_excess(traj, pair: KPair, lattice) -> float:
    """``max(0, sup Theta_bar - 1)`` over admissible ``(Q, t)`` with ``T' - dist(Q,V)^2 < t < T'``.

    Only lattice centres in the quarter box are used. Scales below the resolution floor (Gaussian width under ``4h``) are skipped.
    """
    from .density import density_bar

    lam = traj.g.lambda_g()
    floor = 2.0 * (4.0 * traj.grid.h * lam) ** 2
    best = -math.inf
    quarter = traj.grid.r / 4
    for x0, T in lattice:
        if np.max(np.abs(x0)) > quarter:
            continue
        dist = boundary_dist((x0, T), pair.region, pair.g)
        iT = traj.index_of(T)
        for i in range(iT):
            tau = T - traj.times[i]
            if tau < floor or not traj.times[i] > T - dist**2:
                continue
            best = max(best, density_bar(traj.phis[i], traj.g, traj.grid, x0, tau, "cutoff_paper", traj.phis[iT]))
    return 0.0 if best == -math.inf else max(0.0, best - 1.0)


def eps_probe(members, alpha: float, region: Region | None = None, points_per_axis: int = 3, time_stride: int = 1, threads: int = 1) -> list[tuple]:
    """One row ``(seed, sup_density_excess, supF, K3aV, dist_used)`` per ``(seed, trajectory)`` member.

    Observational only: no relation between the columns is asserted.
    """
    rows = []
    for seed, traj in members:
        pair = pair_from_trajectory(traj, region)
        lattice = probe_lattice(pair, points_per_axis, time_stride)
        kv = K3aV(pair, alpha, lattice, threads)
        excess = _density_excess(traj, pair, lattice)
        rows.append((int(seed), float(excess), _sup_F(traj, pair), float(kv.value), float(kv.dist_used)))
    return rows
