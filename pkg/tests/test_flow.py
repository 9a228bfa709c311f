from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lbmcf.curvature import curvature_pack
from lbmcf.flow import (
    FlowAbort,
    FlowConfig,
    FlowState,
    average_angle,
    flow_diagnostics,
    run,
    scale_flow,
    stable_dt,
    step,
    theta_field,
)
from lbmcf.grid import GridConfig, GridError, MetricField, build_grid
from lbmcf.potentials import flat, quadratic, quartic_bump


def test_stable_dt_formula():
    grid = build_grid(GridConfig(1, 1.0, 1.0, 201))
    one = np.ones(grid.shape + (1, 1))
    assert stable_dt(one, grid, 0.8) == pytest.approx(3.2e-4, rel=1e-12)
    assert stable_dt(10 * one, grid, 0.8) == pytest.approx(10 * stable_dt(one, grid, 0.8), rel=1e-12)


def test_flat_step_stays_zero():
    grid = build_grid(GridConfig(2, 1.0, 1.0, 16))
    g = MetricField.identity(grid)
    state = FlowState(phi=np.zeros(grid.shape), t=0.0, theta_hat=0.0)
    for _ in range(10):
        state = step(state, 1e-3, g, grid)
    assert np.all(state.phi == 0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_quadratic_stationary_per_step(seed):
    rng = np.random.default_rng(seed)
    grid = build_grid(GridConfig(2, 1.0, 1.0, 16))
    M = rng.normal(size=(2, 2))
    g = MetricField.constant_metric(grid, M @ M.T + 0.5 * np.eye(2))
    B = rng.normal(size=(2, 2))
    phi = quadratic(grid, (B + B.T) / 2, rng.normal())
    th = average_angle(phi, g, grid)
    new = step(FlowState(phi=phi, t=0.0, theta_hat=th), 1e-3, g, grid)
    assert np.abs(new.phi - phi).max() <= 1e-14


def test_quadratic_uniform_drift():
    grid = build_grid(GridConfig(1, 1.0, 1.0, 32))
    g = MetricField.identity(grid)
    phi = quadratic(grid, [[0.8]])
    theta0 = float(theta_field(phi, g, grid)[0])
    traj = run(phi, g, grid, FlowConfig(theta_hat=0.0, dt=1e-3, n_steps=50, cadence=50))
    np.testing.assert_allclose(traj.phis[-1] - phi, traj.times[-1] * theta0, atol=1e-12)


def test_flat_history_rows_identical():
    grid = build_grid(GridConfig(1, 1.0, 1.0, 32))
    traj = run(flat(grid), MetricField.identity(grid), grid, FlowConfig(n_steps=100, cadence=10))
    rows = np.array(traj.history)[:, 1:]
    assert np.all(rows == rows[0])


def test_bump_volume_nonincreasing():
    grid = build_grid(GridConfig(1, 2.0, 1.0, 128))
    traj = run(quartic_bump(grid), MetricField.identity(grid), grid, FlowConfig(n_steps=400, cadence=10))
    V = np.array([row[1] for row in traj.history])
    assert np.all(np.diff(V) <= 1e-8)
    assert V[-1] < V[0]


def test_shape_mismatch_rejected():
    grid = build_grid(GridConfig(1, 1.0, 1.0, 32))
    other = build_grid(GridConfig(1, 1.0, 1.0, 16))
    with pytest.raises(GridError):
        run(flat(grid), MetricField.identity(other), grid, FlowConfig(n_steps=1))


def test_instability_aborts_with_last_good_state():
    grid = build_grid(GridConfig(1, 2.0, 1.0, 64))
    g = MetricField.identity(grid)
    with pytest.raises(FlowAbort) as info:
        run(quartic_bump(grid, 3.0), g, grid, FlowConfig(dt=0.05, n_steps=200, maxF_bound=5.0))
    assert info.value.last_good is not None


def test_diagnostics_flat_and_quadratic():
    grid = build_grid(GridConfig(1, 1.0, 1.0, 32))
    g = MetricField.identity(grid)
    for phi in (flat(grid), quadratic(grid, [[0.5]])):
        d = flow_diagnostics(run(phi, g, grid, FlowConfig(n_steps=20, cadence=5)))
        assert np.all(d.heat_residual <= 1e-8)
        assert np.all(d.oneform_residual <= 1e-8)
        assert np.all(np.abs(d.dVdt_formula) <= 1e-12)


def test_scale_flow_identity_and_quadratic():
    grid = build_grid(GridConfig(1, 1.0, 1.0, 32))
    g = MetricField.identity(grid)
    traj = run(quadratic(grid, [[1.0]]), g, grid, FlowConfig(n_steps=10, cadence=5))
    same = scale_flow(traj, 1, 0.0)
    np.testing.assert_array_equal(same.phis, traj.phis)
    sc = scale_flow(traj, 4, float(traj.times[-1]))
    a = curvature_pack(traj.phis[0], traj.g, grid)
    b = curvature_pack(sc.phis[0], sc.g, grid)
    np.testing.assert_allclose(b.lambdas, 0.5, atol=1e-12)
    np.testing.assert_allclose(a.zeta, b.zeta, atol=1e-12)


def test_F_independent_of_target_angle():
    grid = build_grid(GridConfig(1, 2.0, 1.0, 64))
    g = MetricField.identity(grid)
    phi = quartic_bump(grid)
    a = run(phi, g, grid, FlowConfig(theta_hat=0.0, dt=1e-4, n_steps=50, cadence=10))
    b = run(phi, g, grid, FlowConfig(theta_hat=0.3, dt=1e-4, n_steps=50, cadence=10))
    for pa, pb in zip(a.phis, b.phis):
        Fa = curvature_pack(pa, g, grid).F
        Fb = curvature_pack(pb, g, grid).F
        assert np.abs(Fa - Fb).max() <= 1e-12
