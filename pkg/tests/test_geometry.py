import csv
import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bihiggs.errors import GridError, NonFinite
from bihiggs.geometry import (Grid, VortexConfiguration, background_g, background_u0, check_grid,
                              independent_laplacian, integrate, laplacian, laplacian_u0_delta, write_fields_csv)

ONE = VortexConfiguration.build([[0.0, 0.0]])


def g_integral_closed_form(R, N=1):
    return 4.0 * math.pi * N * R * R / (1.0 + R * R)


def test_u0_examples():
    grid = Grid.cartesian(2.0, 5)  # nodes at multiples of 1
    u0 = background_u0(grid, ONE).values
    assert u0[3, 2] == pytest.approx(math.log(0.5), abs=1e-12)  # |x| = 1
    assert u0[2, 2] == -np.inf
    u0d = background_u0(grid, ONE, 0.25).values
    assert u0d[2, 2] == pytest.approx(math.log(0.25), abs=1e-12)
    assert math.log(0.25) == pytest.approx(-1.386294, abs=1e-6)


def test_u0_is_negative_and_increases_to_zero():
    grid = Grid.radial(100.0, 512)
    u0 = background_u0(grid, ONE, 0.1).values
    assert np.all(u0 < 0.0)
    assert np.all(np.diff(u0) > 0.0)
    assert u0[-1] == pytest.approx(-0.9 / (1.0 + 1e4), rel=1e-3)


def test_g_examples():
    grid = Grid.cartesian(2.0, 5)
    assert background_g(grid, ONE).values[2, 2] == 4.0
    three = VortexConfiguration.build([[0.0, 0.0]], [3])
    assert background_g(grid, three).values[2, 2] == 12.0


@pytest.mark.parametrize("R", [100.0, 200.0])
def test_g_quadrature_matches_closed_form(R):
    grid = Grid.radial(R, 4096)
    total = integrate(background_g(grid, ONE))
    assert total == pytest.approx(g_integral_closed_form(R), rel=1e-4)
    if R == 200.0:
        assert total == pytest.approx(4.0 * math.pi, rel=1e-3)


def test_closed_form_value_at_r_max_100():
    assert g_integral_closed_form(100.0) == pytest.approx(12.565114, abs=1e-6)


def test_laplacian_of_quadratic_is_exact():
    for grid in (Grid.radial(10.0, 200, 3.0), Grid.cartesian(3.0, 41)):
        x1, x2 = grid.coords
        lap = laplacian(grid).apply(x1 ** 2 + x2 ** 2)
        np.testing.assert_allclose(lap[grid.interior], 4.0, rtol=1e-9)


def test_laplacian_is_second_order():
    errs = []
    for n in (101, 201, 401):
        grid = Grid.cartesian(3.0, n)
        x1, x2 = grid.coords
        r2 = x1 ** 2 + x2 ** 2
        exact = 4.0 / (1.0 + r2) ** 2
        lap = laplacian(grid).apply(np.log1p(r2))
        errs.append(np.max(np.abs(lap - exact)[grid.interior]))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((orders > 1.8) & (orders < 2.2))


def test_radial_laplacian_is_second_order():
    errs = []
    for n in (256, 512, 1024):
        grid = Grid.radial(10.0, n, 3.0)
        r2 = grid.r ** 2
        lap = laplacian(grid).apply(np.log1p(r2))
        errs.append(np.max(np.abs(lap - 4.0 / (1.0 + r2) ** 2)[grid.interior]))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((orders > 1.7) & (orders < 2.3))


def test_laplacian_is_symmetric_negative_under_quadrature():
    for grid in (Grid.radial(5.0, 40), Grid.cartesian(2.0, 9)):
        lap = laplacian(grid)
        w = grid.weights[grid.interior]
        A = (lap.matrix.toarray() * w[:, None])
        np.testing.assert_allclose(A, A.T, atol=1e-12 * np.max(np.abs(A)))
        assert np.max(np.linalg.eigvalsh(0.5 * (A + A.T))) < 0.0


def test_background_laplacian_identity_off_vortices():
    errs = []
    for n in (101, 201):
        grid = Grid.cartesian(4.0, n)
        conf = VortexConfiguration.build([[0.5, 0.25], [-1.0, 0.0]], [1, 2])
        u0 = background_u0(grid, conf).values
        lap = laplacian(grid).apply(np.where(np.isfinite(u0), u0, 0.0))
        near = np.zeros(grid.shape, bool)
        for p in conf.points:
            near |= grid.dist2(p) < 0.25
        keep = grid.interior & ~near
        g = background_g(grid, conf).values
        errs.append(np.max(np.abs(lap + g)[keep]))
        np.testing.assert_allclose(laplacian_u0_delta(grid, conf, 0.0)[keep], -g[keep])
    assert errs[0] / errs[1] > 3.5


def test_trapezoid_of_constant():
    grid = Grid.cartesian(2.0, 21)
    assert integrate(np.ones(grid.shape), grid) == pytest.approx(16.0, rel=1e-14)
    assert integrate(np.zeros(grid.shape), grid) == 0.0
    with pytest.raises(NonFinite):
        integrate(np.full(grid.shape, np.nan), grid)


def test_simpson_and_trapezoid_agree():
    grid = Grid.radial(20.0, 2001, 0.0)
    g = background_g(grid, ONE).values
    assert integrate(g, grid, simpson=True) == pytest.approx(integrate(g, grid), rel=1e-4)


def test_background_u0_near_core_matches_high_precision():
    getcontext().prec = 50
    grid = Grid.radial(10.0, 64, 0.0)
    delta = 1e-12
    u0 = background_u0(grid, ONE, delta).values
    for i in (1, 2, 5):
        d2 = Decimal(float(grid.r[i])) ** 2
        ref = ((Decimal(delta) + d2) / (1 + d2)).ln()
        assert u0[i] == pytest.approx(float(ref), rel=1e-14)


@settings(max_examples=30)
@given(st.floats(0.0, 0.49), st.floats(0.0, 0.49))
def test_u0_delta_monotone_in_delta(a, b):
    lo, hi = sorted((a, b))
    grid = Grid.radial(10.0, 64)
    ua = background_u0(grid, ONE, lo).values
    ub = background_u0(grid, ONE, hi).values
    assert np.all(ua <= ub)
    assert np.all(ub <= 0.0)


@settings(max_examples=20)
@given(st.floats(1e-8, 1e-2))
def test_graded_grid_hits_first_spacing(r_first):
    grid = Grid.radial_graded(100.0, 1024, r_first)
    assert grid.r[1] == pytest.approx(r_first, rel=1e-8)
    assert grid.r[-1] == pytest.approx(100.0)
    assert np.all(np.diff(grid.r) > 0)


def test_grid_checks():
    far = VortexConfiguration.build([[2.0, 0.0]])
    with pytest.raises(GridError):
        check_grid(Grid.cartesian(5.0, 21), far)
    with pytest.raises(GridError):
        check_grid(Grid.radial(50.0, 64), far)
    check_grid(Grid.cartesian(10.0, 21), far)


def test_cross_check_laplacian_agrees():
    grid = Grid.radial(10.0, 1024, 3.0)
    f = np.exp(-grid.r ** 2)
    a = laplacian(grid).apply(f)
    b = independent_laplacian(grid, f)
    np.testing.assert_allclose(a[1:-2], b[1:-2], atol=1e-3)


def test_fields_csv_round_trip(tmp_path):
    grid = Grid.radial(10.0, 32)
    vals = background_u0(grid, ONE, 0.1).values
    path = tmp_path / "f.csv"
    write_fields_csv(path, grid, {"u0": vals})
    with open(path) as fh:
        assert fh.readline().startswith("# name=fields")
        rows = list(csv.reader(fh))
    assert rows[0] == ["r", "u0"]
    back = np.array([float(r[1]) for r in rows[1:]])
    assert np.array_equal(back, vals)
