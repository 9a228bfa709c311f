from __future__ import annotations

import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from lbmcf.curvature import (
    angle_zeta,
    curvature_F,
    curvature_pack,
    dhym_residual,
    induced_eta,
    laplacian_eta,
    mean_curvature_oneform,
    spectrum_K,
    volume_functional,
)
from lbmcf.grid import GridConfig, MetricField, NonSPDMetricError, build_grid
from lbmcf.potentials import quadratic, quartic_bump


def _grid1(N=201, r=1.0):
    return build_grid(GridConfig(1, r, 1.0, N))


def test_F_of_quadratic_and_quartic():
    grid = _grid1(401, 2.0)
    x = grid.coords[..., 0]
    np.testing.assert_allclose(curvature_F(x**2, grid)[..., 0, 0], 0.5, atol=1e-10)
    assert curvature_F(x**4, grid)[grid.node_of([1.0])][0, 0] == pytest.approx(3.0, abs=1e-3)
    g2 = build_grid(GridConfig(2, 1.0, 1.0, 9))
    F = curvature_F(g2.coords[..., 0] * g2.coords[..., 1], g2)
    np.testing.assert_allclose(F, np.broadcast_to([[0, 0.25], [0.25, 0]], F.shape), atol=1e-12)


def _const(n, M):
    grid = build_grid(GridConfig(n, 1.0, 1.0, 8))
    return grid, MetricField.constant_metric(grid, M)


@pytest.mark.parametrize(
    "g, F, expected",
    [
        ([[1.0]], [[0.5]], [0.5]),
        (np.eye(2), np.diag([1.0, -1.0]), [-1.0, 1.0]),
        (np.diag([4.0, 1.0]), np.diag([2.0, 3.0]), [0.5, 3.0]),
    ],
)
def test_spectrum_examples(g, F, expected):
    grid, gm = _const(len(g), g)
    _, lam = spectrum_K(gm, np.broadcast_to(np.asarray(F, float), grid.shape + (len(g), len(g))))
    np.testing.assert_allclose(lam[(0,) * grid.n], expected, atol=1e-14)


@pytest.mark.parametrize(
    "lam, theta, zeta",
    [([0.0], 0.0, 1.0), ([0.5], math.atan(0.5), 1 + 0.5j), ([1.0, 1.0], math.pi / 2, 2j)],
)
def test_angle_zeta_examples(lam, theta, zeta):
    th, z, az = angle_zeta(np.array(lam))
    assert th == pytest.approx(theta, abs=1e-15)
    assert z == pytest.approx(zeta, abs=1e-15)
    assert az == pytest.approx(abs(zeta), abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=3))
def test_zeta_structure_properties(lam):
    th, z, az = angle_zeta(np.array(lam))
    assert abs(np.angle(z) - th) < 1e-12 or abs(abs(np.angle(z) - th) - 2 * math.pi) < 1e-9
    assert az >= 1.0
    assert abs(az**2 - np.prod(1 + np.square(lam))) <= 1e-12 * np.prod(1 + np.square(lam))
    assert abs(th) < math.pi * len(lam) / 2


def test_eta_examples():
    grid, g = _const(1, [[1.0]])
    F = np.full(grid.shape + (1, 1), 0.5)
    np.testing.assert_allclose(induced_eta(g, F), 1.25)
    np.testing.assert_allclose(induced_eta(g, 6 * F), 10.0)
    grid2, g2 = _const(2, np.eye(2))
    np.testing.assert_allclose(induced_eta(g2, np.zeros(grid2.shape + (2, 2))), np.broadcast_to(np.eye(2), grid2.shape + (2, 2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_eta_dominates_g(seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(2, 2))
    grid, g = _const(2, M @ M.T + 0.3 * np.eye(2))
    B = rng.normal(size=(2, 2)) * 3
    F = np.broadcast_to((B + B.T) / 2, grid.shape + (2, 2))
    ev = np.linalg.eigvalsh(induced_eta(g, F) - g.values)
    assert ev.min() >= -1e-12 * np.abs(F).max() ** 2


def test_mean_curvature_examples():
    grid = _grid1(401, 2.0)
    x = grid.coords[..., 0]
    th = curvature_pack(x**2, MetricField.identity(grid), grid).theta
    np.testing.assert_allclose(mean_curvature_oneform(th, grid), 0.0, atol=1e-8)
    th4 = curvature_pack(x**4, MetricField.identity(grid), grid).theta
    assert mean_curvature_oneform(th4, grid)[grid.node_of([1.0])][0] == pytest.approx(0.3, abs=1e-3)


def test_laplacian_examples():
    grid = _grid1(33)
    x = grid.coords[..., 0]
    one = np.ones(grid.shape + (1, 1))
    np.testing.assert_allclose(laplacian_eta(x**2, one, grid), 0.5, atol=1e-12)
    np.testing.assert_allclose(laplacian_eta(x**2, 10 * one, grid), 0.05, atol=1e-12)
    np.testing.assert_allclose(laplacian_eta(np.full(grid.shape, 3.0), one, grid), 0.0, atol=1e-12)


def test_dhym_flat_and_quadratic_vanish():
    grid = build_grid(GridConfig(2, 1.0, 1.0, 17))
    g = MetricField.constant_metric(grid, [[1.0, 0.2], [0.2, 0.7]])
    for phi in (np.zeros(grid.shape), quadratic(grid, [[0.6, 0.2], [0.2, -0.5]], 1.0)):
        pk = curvature_pack(phi, g, grid)
        assert np.abs(dhym_residual(pk.theta, pk.eta, pk.K, grid)).max() < 1e-9


def test_dhym_matches_symbolic_oracle():
    x = sp.symbols("x")
    F = sp.Rational(1, 4) * sp.diff(x**4, x, 2)
    theta = sp.atan(F)
    eta = 1 + F**2
    H = sp.Rational(1, 2) * sp.diff(theta, x)
    L = sp.Rational(1, 4) * sp.diff(theta, x, 2) / eta - H * (F / eta) * H
    exact = float(L.subs(x, sp.Rational(1, 2)))
    errs = []
    for N in (201, 401):
        grid = _grid1(N)
        pk = curvature_pack(grid.coords[..., 0] ** 4, MetricField.identity(grid), grid)
        errs.append(abs(dhym_residual(pk.theta, pk.eta, pk.K, grid)[grid.node_of([0.5])] - exact))
    assert errs[1] < 1e-3 and errs[0] / errs[1] > 3.5


def test_volume_functional():
    grid = _grid1(129)
    g = MetricField.identity(grid)
    assert volume_functional(np.ones(grid.shape), g, grid) == pytest.approx(4.0, abs=1e-12)
    az = curvature_pack(grid.coords[..., 0] ** 2, g, grid).abs_zeta
    assert volume_functional(az, g, grid) == pytest.approx(math.sqrt(1.25) * 4, abs=1e-6)


def test_volume_quartic_matches_quadrature():
    from scipy.integrate import quad

    exact = 2 * quad(lambda s: math.sqrt(1 + 9 * s**4), -1, 1, epsabs=1e-13)[0]
    grid = _grid1(4097)
    az = curvature_pack(grid.coords[..., 0] ** 4, MetricField.identity(grid), grid).abs_zeta
    assert volume_functional(az, MetricField.identity(grid), grid) == pytest.approx(exact, abs=1e-6)


def test_non_spd_curvature_input_rejected():
    grid = build_grid(GridConfig(1, 1.0, 1.0, 9))
    with pytest.raises(NonSPDMetricError):
        MetricField.constant_metric(grid, [[-1.0]])


def test_bump_theta_in_range():
    grid = build_grid(GridConfig(2, 1.0, 1.0, 33))
    th = curvature_pack(quartic_bump(grid, 5.0, 0.4), MetricField.identity(grid), grid).theta
    assert np.all(np.abs(th) < math.pi)
