import math

import numpy as np
import pytest
from scipy.integrate import quad

from bihiggs.errors import DomainError, HypothesisViolation, SolverError
from bihiggs.geometry import Field, Grid, VortexConfiguration, background_g, background_u0, laplacian
from bihiggs.model import builtin
from bihiggs.observables import curvature, energy, eta_fit, flux, reconstruct
from bihiggs.strings import (C_SCHEDULE, _cell_power_average, conformal_exponent, conformal_factor,
                             core_radius_estimate, extension_rungs, find_c, rhs_string, solve_string,
                             subsolution_margin)
from bihiggs.vortex import solve_vortex

G = 0.01


def conf(n=1, newton_g=G, c="auto"):
    return VortexConfiguration.build([[0.0, 0.0]], [n], newton_g, c)


def F_quad(model, t):
    return quad(lambda s: 2.0 * float(model.g_derived(np.array(s))), 1.0, t, epsabs=1e-14)[0]


def test_rhs_at_supersolution_is_background(canon_model):
    grid = Grid.radial(50.0, 256)
    c = conf()
    u = Field(grid, -background_u0(grid, c, 0.1).values)
    rhs = rhs_string(canon_model, c, 1.0, 0.1, u).values
    np.testing.assert_allclose(rhs, background_g(grid, c).values, atol=1e-14)


def test_rhs_without_gravity_is_flat(canon_model):
    grid = Grid.radial(50.0, 256)
    c = conf(newton_g=0.0)
    delta = 0.2
    u0d = background_u0(grid, c, delta).values
    u = Field(grid, -0.5 * u0d)
    rhs = rhs_string(canon_model, c, 3.0, delta, u).values
    expected = canon_model.rhs_of_v(0.5 * u0d) + background_g(grid, c).values
    np.testing.assert_allclose(rhs, expected, rtol=1e-13)


def test_rhs_example_at_origin(canon_model):
    grid = Grid.radial(50.0, 256)
    delta = 0.25
    u = Field(grid, np.zeros(grid.shape))
    value = rhs_string(canon_model, conf(), 0.0, delta, u).values[0]
    # at x = 0 with u = 0: t = delta, eta = -8 pi G F(delta)
    t = delta
    U = 0.5 * (t - 1.0)
    W = math.sqrt(1.0 - U * U)
    eta = -8.0 * math.pi * G * F_quad(canon_model, t)
    assert value == pytest.approx(2.0 * math.exp(eta) * U / W + 4.0, rel=1e-12)


def test_find_c_is_minimal_on_schedule(canon_model):
    grid = Grid.radial(100.0, 1024)
    c_conf = conf(3)
    c = find_c(canon_model, grid, c_conf, 0.4)
    assert subsolution_margin(canon_model, grid, c_conf, c, 0.4) < 0.0
    i = C_SCHEDULE.index(c)
    if i > 0:
        assert subsolution_margin(canon_model, grid, c_conf, C_SCHEDULE[i - 1], 0.4) >= 0.0
    # the margin improves monotonically in c
    margins = [subsolution_margin(canon_model, grid, c_conf, s, 0.4) for s in C_SCHEDULE[:5]]
    assert all(b <= a for a, b in zip(margins, margins[1:]))


def test_gravity_bound_is_enforced(canon_model, radial_grid):
    with pytest.raises(HypothesisViolation):
        solve_string(canon_model, radial_grid, conf(newton_g=0.05))
    with pytest.raises(HypothesisViolation):
        find_c(canon_model, radial_grid, conf(3, newton_g=1.0 / (8.0 * math.pi * 3)))


def test_zero_gravity_reduces_to_vortex(canon_model, radial_grid, vortex_n1):
    s = solve_string(canon_model, radial_grid, conf(newton_g=0.0))
    np.testing.assert_allclose(s.u.values, vortex_n1.u.values, atol=1e-6)
    assert np.all(s.eta.values == 0.0)
    e = conformal_factor(canon_model, conf(newton_g=0.0), 0.0, s.v, s.u).values
    assert np.all(e == 1.0)


def test_string_flux_quantized(string_n1, canon_model):
    fields = reconstruct(canon_model, string_n1)
    assert flux(fields, string_n1.conf)["flux"] == pytest.approx(2.0 * math.pi, rel=1e-2)


def test_curvature_quantized(string_n3, canon_model):
    fields = reconstruct(canon_model, string_n3)
    total = curvature(fields, G)["curvature_total"]
    expected = 16.0 * math.pi ** 2 * G * 3
    assert expected == pytest.approx(4.7374, abs=1e-4)
    assert total == pytest.approx(expected, rel=3e-2)


def test_conformal_exponent_slope(string_n3):
    fit = eta_fit(string_n3.eta.values, string_n3.grid, string_n3.conf)
    assert fit["expected"] == pytest.approx(-1.508, abs=1e-3)
    assert fit["slope"] == pytest.approx(fit["expected"], rel=5e-2)


def test_bracket_chain(string_n3):
    checks = string_n3.checks
    assert checks["chain_hard_violations"] == 0
    u = string_n3.u.values
    upper = -background_u0(string_n3.grid, string_n3.conf).values
    assert np.all(u[1:] >= -1e-9) and np.all(u[1:] <= upper[1:] + 1e-9)


def test_eta_finite_at_vortex_node(string_n3):
    assert np.all(np.isfinite(string_n3.eta.values))


def test_einstein_consistency(string_n3, canon_model):
    s = string_n3
    grid = s.grid
    v = s.v.values
    lhs = laplacian(grid).apply(s.eta.values + 8.0 * math.pi * G * canon_model.F_of_v(np.where(grid.r > 0, v, 0.0)))
    t = np.exp(v)
    rhs = 16.0 * math.pi * G * np.exp(s.eta.values) * canon_model.U_of_v(v) / (
        canon_model.sqrtG(t) * canon_model.dilation(t))
    sel = (grid.r > 0.5) & (grid.r < 20.0)
    err = np.max(np.abs(lhs - rhs)[sel]) / np.max(np.abs(rhs[sel]))
    assert err < 1e-3


def test_conformal_exponent_matches_regular_form(string_n3, canon_model):
    s = string_n3
    eta = conformal_exponent(canon_model, s.conf, s.c, s.u).values
    r = s.grid.r
    sel = r > 0
    expected = 8.0 * math.pi * G * (2.0 * s.c - canon_model.F_of_v(s.v.values[sel]) + s.v.values[sel]
                                    - 3.0 * np.log(r[sel] ** 2))
    np.testing.assert_allclose(eta[sel], expected, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0, 1.5])
def test_cell_average_radial(alpha):
    grid = Grid.radial(10.0, 64)
    R = 0.5 * grid.r[1]
    ref = quad(lambda r: r ** (1.0 - alpha), 0.0, R)[0] * 2.0 / R ** 2
    assert _cell_power_average(grid, alpha) == pytest.approx(ref, rel=1e-10)


def test_cell_average_cartesian():
    grid = Grid.cartesian(5.0, 11)  # h = 1
    assert _cell_power_average(grid, 0.0) == pytest.approx(1.0, rel=1e-12)
    # mean of 1/|x| over the unit square centred at the origin
    assert _cell_power_average(grid, 1.0) == pytest.approx(4.0 * math.log(1.0 + math.sqrt(2.0)), rel=1e-10)
    with pytest.raises(DomainError):
        _cell_power_average(grid, 2.0)


def test_core_radius_and_extension_rungs():
    assert core_radius_estimate(conf(newton_g=0.0), 1.0) == 1.0
    c99 = conf(newton_g=0.99 / (8.0 * math.pi))
    eps = core_radius_estimate(c99, 1.0)
    assert eps == pytest.approx(math.exp(-0.99 / 0.01), rel=1e-12)
    rungs = extension_rungs(0.01, 1e-20, 1e-3)
    assert rungs[0] == pytest.approx(1e-4)
    np.testing.assert_allclose(np.array(rungs[:-1]) / np.array(rungs[1:]), 100.0)
    assert rungs[-1] > 1e-10 >= rungs[-1] / 100.0


def test_unresolved_core_is_diagnosed(canon_model):
    near = conf(newton_g=0.99 / (8.0 * math.pi))
    with pytest.raises(SolverError, match="core radius"):
        solve_string(canon_model, Grid.radial(100.0, 1024), near)


def test_invalid_ladder(canon_model, radial_grid):
    with pytest.raises(ValueError):
        solve_string(canon_model, radial_grid, conf(), ladder=(0.2, 0.3, 0.0))


def test_fixed_c_is_used(canon_model):
    grid = Grid.radial(100.0, 1024)
    s = solve_string(canon_model, grid, conf(1, c=8.0))
    assert s.c == 8.0


def test_zero_gravity_string_matches_fresh_vortex(canon_model):
    grid = Grid.radial(80.0, 512)
    a = solve_string(canon_model, grid, conf(2, newton_g=0.0))
    b = solve_vortex(canon_model, grid, conf(2, newton_g=0.0))
    np.testing.assert_allclose(a.v_accurate, b.v_accurate, atol=1e-12)


@pytest.mark.parametrize("name, per_vortex", [("canon", 1.0), ("balanced", 2.0)])
def test_string_energy_tracks_core_current(name, per_vortex):
    # E = 2 pi N - 4 pi q0 N with q0 = lim t g(t): pi N for canon, 2 pi N when q0 = 0
    model = builtin(name)
    s = solve_string(model, Grid.radial(100.0, 4096), conf(3))
    assert energy(reconstruct(model, s), "conformal") == pytest.approx(per_vortex * 3.0 * math.pi, rel=1e-2)
