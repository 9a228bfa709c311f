from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lbmcf.flow import FlowConfig, run
from lbmcf.grid import GridConfig, MetricField, build_grid
from lbmcf.knorm import (
    EPS_COLUMNS,
    K3a,
    K3aV,
    KPair,
    Region,
    boundary_dist,
    composition_defect,
    eps_probe,
    pair_from_trajectory,
    parabolic_dist,
    partial_c3a_norm,
    probe_lattice,
    scale_pair,
    scaled_norm,
)
from lbmcf.potentials import flat, quartic_bump


def _static(f_of_x, n=1, N=33, r=1.5, g=None, times=None):
    grid = build_grid(GridConfig(n, r, 1.0, N))
    times = np.linspace(0.0, 1.0, 6) if times is None else times
    f = f_of_x(grid.coords)
    return KPair.from_samples(grid, np.eye(n) if g is None else g, times, np.array([f] * len(times)))


def _timed(c, n=1, N=33):
    grid = build_grid(GridConfig(n, 1.5, 1.0, N))
    times = np.linspace(0.0, 1.0, 11)
    return KPair.from_samples(grid, np.eye(n), times, np.array([np.full(grid.shape, c * t) for t in times]))


def test_parabolic_distance_examples():
    assert parabolic_dist(([0.1], 0.2), ([0.1], 0.2), [[1.0]]) == 0.0
    assert parabolic_dist(([0.0], 0.0), ([0.0], 0.25)) == pytest.approx(0.5)
    assert parabolic_dist(([0.0], 0.0), ([0.3], 0.04), [[1.0]]) == pytest.approx(math.sqrt(2) * 0.3, rel=1e-12)


def test_boundary_distance_examples():
    V = Region(lo=(-1.0,), hi=(1.0,), a=0.0, b=1.0)
    assert boundary_dist(([0.0], 0.64), V) == pytest.approx(0.6)
    assert boundary_dist(([0.0], 0.0), V) == 0.0
    assert boundary_dist(([0.9], 0.5), V, [[1.0]]) == pytest.approx(math.sqrt(2) * 0.1, rel=1e-12)
    with pytest.raises(ValueError):
        boundary_dist(([1.5], 0.5), V)


@settings(max_examples=40, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 1), st.floats(0, 1), st.floats(-1, 1), st.floats(0, 1))
def test_parabolic_distance_triangle_inequality(x1, x2, t1, t2, x3, t3):
    Q1, Q2, Q3 = ([x1], t1), ([x2], t2), ([x3], t3)
    assert parabolic_dist(Q1, Q3) <= parabolic_dist(Q1, Q2) + parabolic_dist(Q2, Q3) + 1e-12


def test_norm_vanishes_on_static_quadratics():
    pair = _static(lambda x: 0.4 + 0.7 * x[..., 0] ** 2 - x[..., 0] * x[..., 1], n=2, N=17)
    assert partial_c3a_norm(pair, ([0.0, 0.0], 0.4), 0.5) == 0.0
    res = K3a(pair, ([0.0, 0.0], 0.4), 0.5)
    assert res.K == 0.0 and res.status == "zero"


def test_linear_in_time_norm_and_range_statuses():
    assert partial_c3a_norm(_timed(0.5), ([0.0], 0.5), 0.5) == pytest.approx(0.5, abs=1e-12)
    below = K3a(_timed(0.5), ([0.0], 0.5), 0.5)
    assert below.status == "below_range"
    inf = K3a(_timed(4.0), ([0.0], 0.5), 0.5)
    assert inf.K == math.inf and inf.status == "infinite"


def test_cubic_profile_bisection():
    pair = _static(lambda x: x[..., 0] ** 3, N=65)
    Q = ([0.0], 0.4)
    assert partial_c3a_norm(pair, Q, 0.5) == pytest.approx(0.75, rel=1e-9)
    res = K3a(pair, Q, 0.5)
    assert res.status == "bracketed" and not res.non_monotone
    assert res.K == pytest.approx(0.75, rel=max(res.rel_tol, 1e-9) * 2)


def test_unit_norm_gives_K_at_most_one():
    pair = _static(lambda x: x[..., 0] ** 3 / 0.75, N=65)
    res = K3a(pair, ([0.0], 0.4), 0.5)
    assert res.K <= 1 + 2 * res.rel_tol


def test_scale_pair_identity():
    pair = _static(lambda x: np.sin(x[..., 0]))
    same = scale_pair(pair, 1.0, 0.0)
    np.testing.assert_array_equal(same.fs, pair.fs)
    np.testing.assert_array_equal(same.times, pair.times)
    assert same.region == pair.region


def test_alpha_outside_unit_interval_rejected():
    pair = _static(lambda x: x[..., 0] ** 3)
    with pytest.raises(ValueError):
        scaled_norm(pair, ([0.0], 0.4), 1.0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.25, 0.5, 2.0, 4.0, 16.0]))
def test_scaled_norm_bounds(seed, lam):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=3)
    pair = _static(lambda x: c[0] * np.sin(x[..., 0] + c[1]) + c[2] * x[..., 0] ** 3, N=41)
    Q = ([0.0], 0.4)
    base = scaled_norm(pair, Q, 0.5, 1.0)
    v = scaled_norm(pair, Q, 0.5, lam)
    lo, hi = sorted((base, lam**-0.75 * base))
    assert lo * (1 - 1e-12) <= v <= hi * (1 + 1e-12)


@pytest.fixture(scope="module")
def bump_pair():
    grid = build_grid(GridConfig(1, 2.0, 1.0, 65))
    traj = run(quartic_bump(grid, 0.7, 0.5), MetricField.identity(grid), grid, FlowConfig(n_steps=200, cadence=20))
    return traj, pair_from_trajectory(traj)


def test_composition_of_scalings(bump_pair):
    _, pair = bump_pair
    assert composition_defect(pair, 2.0, 4.0, float(pair.times[4]), 0.003) <= 1e-12


def test_K3aV_invariant_under_scaling(bump_pair):
    _, pair = bump_pair
    t0, kappa = float(pair.times[3]), 4.0
    lattice = probe_lattice(pair)
    a = K3aV(pair, 0.5, lattice)
    b = K3aV(scale_pair(pair, kappa, t0), 0.5, [(x, kappa * (t - t0)) for x, t in lattice])
    assert abs(a.value - b.value) <= 2 * max(a.max_rel_tol, b.max_rel_tol) * a.value


def test_K3aV_thread_independent(bump_pair):
    _, pair = bump_pair
    assert K3aV(pair, 0.5, threads=1).rows == K3aV(pair, 0.5, threads=4).rows


def test_K3aV_flat_and_quadratic_zero():
    assert K3aV(_static(lambda x: np.zeros(x.shape[:-1])), 0.5).value == 0.0
    assert K3aV(_static(lambda x: 2 * x[..., 0] ** 2 - 1), 0.5).value == 0.0


def test_eps_probe_rows(bump_pair):
    traj, _ = bump_pair
    grid = traj.grid
    flat_traj = run(flat(grid), traj.g, grid, FlowConfig(n_steps=200, cadence=20))
    rows = eps_probe([(0, flat_traj), (1, traj)], 0.5)
    assert len(rows) == 2 and all(len(r) == len(EPS_COLUMNS) for r in rows)
    assert rows[0][1:4] == (0.0, 0.0, 0.0)
    assert all(math.isfinite(v) for r in rows for v in r)
    assert rows[1][2] > 0 and rows[1][3] > 0
