from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lbmcf.curvature import curvature_pack, mean_curvature_oneform
from lbmcf.frames import (
    SectionField,
    build_frames,
    identity_fields,
    decompose,
    div_h,
    div_v,
    gram,
    identity_suite_ch4,
    mean_curvature_section,
    norm_sq,
    pairing,
    position_section,
    random_section,
    weighted_identity_sides,
)
from lbmcf.grid import GridConfig, MetricField, build_grid
from lbmcf.potentials import bump_test_function, quadratic, quartic_bump


def _grid(n=1, N=9, r=1.0):
    return build_grid(GridConfig(n, r, 1.0, N))


def test_flat_frames():
    grid = _grid(2)
    g = MetricField.identity(grid)
    fr = build_frames(g, np.zeros(grid.shape + (2, 2)))
    I = np.broadcast_to(np.eye(2), grid.shape + (2, 2))
    np.testing.assert_array_equal(fr.E_up, I)
    np.testing.assert_array_equal(fr.E_dn, 0)
    np.testing.assert_array_equal(fr.F_up, 0)
    np.testing.assert_array_equal(fr.F_dn, I)
    np.testing.assert_array_equal(fr.eta, I)


def test_one_dimensional_frames_and_pairings():
    grid = _grid()
    g = MetricField.identity(grid)
    F = np.full(grid.shape + (1, 1), 0.5)
    fr = build_frames(g, F)
    E, Fn = fr.E(0), fr.Fn(0)
    np.testing.assert_allclose(E.up, 1.0)
    np.testing.assert_allclose(E.dn, 0.5)
    np.testing.assert_allclose(Fn.up, -0.5)
    np.testing.assert_allclose(Fn.dn, 1.0)
    np.testing.assert_allclose(fr.eta, 1.25)
    np.testing.assert_allclose(pairing(E, E, g), 1.25)
    np.testing.assert_allclose(pairing(E, Fn, g), 0.0)
    np.testing.assert_allclose(pairing(SectionField.zeros_like(E), E, g), 0.0)
    top, perp, _ = decompose(E, fr, g)
    np.testing.assert_allclose(norm_sq(perp, g), 0.0, atol=1e-15)
    top, perp, _ = decompose(Fn, fr, g)
    np.testing.assert_allclose(norm_sq(top, g), 0.0, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_gram_structure_and_decomposition(seed):
    rng = np.random.default_rng(seed)
    grid = _grid(2, 8)
    M = rng.normal(size=(2, 2))
    g = MetricField.constant_metric(grid, M @ M.T + 0.4 * np.eye(2))
    B = rng.normal(size=(2, 2))
    F = np.broadcast_to((B + B.T) / 2, grid.shape + (2, 2)).copy()
    fr = build_frames(g, F)
    EE, EF, FF = gram(fr, g)
    np.testing.assert_allclose(EE, fr.eta, atol=1e-12)
    np.testing.assert_allclose(EF, 0.0, atol=1e-12)
    np.testing.assert_allclose(FF, fr.eta, atol=1e-12)
    Y = SectionField(rng.normal(size=grid.shape + (2,)), rng.normal(size=grid.shape + (2,)))
    top, perp, _ = decompose(Y, fr, g)
    np.testing.assert_allclose((top + perp).up, Y.up, atol=1e-12)
    np.testing.assert_allclose((top + perp).dn, Y.dn, atol=1e-12)
    for i in range(2):
        assert np.abs(pairing(fr.E(i), perp, g)).max() < 1e-12
    np.testing.assert_allclose(norm_sq(top, g) + norm_sq(perp, g), norm_sq(Y, g), rtol=1e-12)


def test_mean_curvature_section_of_quadratic_vanishes():
    grid = _grid(2, 17)
    g = MetricField.identity(grid)
    pk = curvature_pack(quadratic(grid, [[0.5, 0.2], [0.2, 1.0]]), g, grid)
    Hs = mean_curvature_section(g, pk.F, pk.eta, mean_curvature_oneform(pk.theta, grid))
    assert np.abs(Hs.up).max() < 1e-10 and np.abs(Hs.dn).max() < 1e-10


def test_position_section_norms():
    grid = _grid(1, 33)
    g = MetricField.identity(grid)
    x = grid.coords[..., 0]
    np.testing.assert_allclose(norm_sq(position_section(np.zeros(grid.shape), [0.0], grid), g), 4 * x**2, atol=1e-12)
    np.testing.assert_allclose(norm_sq(position_section(x**2, [0.0], grid), g), 5 * x**2, atol=1e-12)


def test_position_section_warns_outside_quarter_box():
    grid = _grid(2, 9)
    with pytest.warns(UserWarning, match="quarter box"):
        position_section(np.zeros(grid.shape), [0.5, 0.0], grid)


def test_divergences():
    grid = _grid(1, 33)
    g = MetricField.identity(grid)
    phi = grid.coords[..., 0] ** 2
    pk = curvature_pack(phi, g, grid)
    P = position_section(phi, [0.0], grid)
    np.testing.assert_allclose(div_h(P, g, pk.F, pk.eta, grid), 1.0, atol=1e-12)
    zero = np.zeros(grid.shape + (1,))
    np.testing.assert_array_equal(div_v(zero, pk.abs_zeta, g, grid), 0.0)


def test_identity_suite_flat():
    grid = _grid(2, 24, 2.0)
    g = MetricField.identity(grid)
    Y = random_section(grid, 5)
    rep = identity_suite_ch4(np.zeros(grid.shape), g, grid, Y=Y)
    assert max(rep.values()) <= 1e-12


def test_position_divergence_exact_for_quadratic():
    grid = _grid(1, 64, 2.0)
    g = MetricField.identity(grid)
    phi = grid.coords[..., 0] ** 2
    rep = identity_suite_ch4(phi, g, grid, tests=("position_divergence",), f=np.ones(grid.shape))
    assert rep["position_divergence"] <= 1e-10


def test_identity_suite_converges_at_second_order():
    res = []
    for N in (64, 128):
        grid = _grid(1, N, 2.0)
        g = MetricField.identity(grid)
        res.append(identity_suite_ch4(quartic_bump(grid), g, grid, f=bump_test_function(grid, radius=1.5), seed=1))
    for k in res[0]:
        assert np.log2(res[0][k] / res[1][k]) > 1.7


def test_weighted_identity_sides_agree():
    grid = _grid(1, 512, 2.0)
    g = MetricField.identity(grid)
    lhs, rhs = weighted_identity_sides(bump_test_function(grid, radius=1.5), -2.5, identity_fields(quartic_bump(grid), g, grid), g, grid)
    assert abs(lhs - rhs) <= 1e-3 * max(abs(lhs), abs(rhs))


def test_weighted_identity_rejects_nonvanishing_test_function():
    grid = _grid(1, 32, 2.0)
    g = MetricField.identity(grid)
    with pytest.raises(ValueError):
        weighted_identity_sides(np.ones(grid.shape), -2.5, identity_fields(np.zeros(grid.shape), g, grid), g, grid)
