import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bihiggs.errors import FitDegenerate
from bihiggs.geometry import Grid, VortexConfiguration
from bihiggs.model import balanced
from bihiggs.observables import (bps_residuals, current_integral, curvature, decay_fit, energy,
                                 energy_topological, flux, gauss_curvature, reconstruct, richardson_order,
                                 stress_residuals, summarize)
from bihiggs.verify import perturbed
from bihiggs.vortex import solve_vortex


@pytest.fixture(scope="module")
def fields_n1(canon_model, vortex_n1):
    return reconstruct(canon_model, vortex_n1)


def test_field_strength_at_vortex(fields_n1):
    assert fields_n1.F12.values[0] == pytest.approx(1.0 / math.sqrt(3.0), abs=1e-12)
    assert fields_n1.F12.values[0] == pytest.approx(0.57735, abs=1e-5)
    assert fields_n1.phi_sq.values[0] == 0.0


def test_vacuum_at_rim(fields_n1):
    assert fields_n1.phi_sq.values[-1] == 1.0
    assert fields_n1.F12.values[-1] == 0.0


@pytest.mark.parametrize("n", [1, 2, 3])
def test_flux_quantization(canon_model, radial_grid, n):
    s = solve_vortex(canon_model, radial_grid, VortexConfiguration.build([[0.0, 0.0]], [n]))
    out = flux(reconstruct(canon_model, s), s.conf)
    assert out["flux"] == pytest.approx(2.0 * math.pi * n, rel=1e-3)
    # (1/2) int g on the disk misses 2 pi N / (1 + R^2); the rim flux of u supplies it
    R = radial_grid.r_max
    assert out["flux_identity_gap"] == pytest.approx(2.0 * math.pi * n / (1.0 + R * R), rel=2e-2)


def test_self_duality_residuals(canon_model, fields_n1):
    res = bps_residuals(canon_model, fields_n1)
    assert res["bps_residual"] < 1e-3
    assert res["energy_identity_residual"] < 1e-3


def test_energy_is_flux_plus_current(canon_model, fields_n1, vortex_n1):
    top = energy_topological(fields_n1)
    E = energy(fields_n1)
    assert E == pytest.approx(top["energy_topological"], rel=1e-3)
    # the current does not vanish: near a zero, g e^v -> (1 + sqrt(G(0)) U(0)) / 2 stays finite
    q0 = canon_model.core_current
    assert top["J12_integral"] == pytest.approx(-4.0 * math.pi * q0, rel=1e-2)
    assert E == pytest.approx(math.pi, rel=1e-2)


def test_energy_without_core_current_is_topological():
    model = balanced()
    s = solve_vortex(model, Grid.radial(100.0, 2048), VortexConfiguration.build([[0.0, 0.0]]))
    fields = reconstruct(model, s)
    assert energy(fields) == pytest.approx(2.0 * math.pi, rel=2e-2)
    assert energy_topological(fields)["J12_integral"] == pytest.approx(0.0, abs=1e-2)


def test_current_integral(canon_model, vortex_n1):
    grid = vortex_n1.grid
    assert current_integral(canon_model, grid, np.zeros(grid.shape)) == 0.0
    assert abs(current_integral(canon_model, grid, vortex_n1.v_accurate)) < 1e-6
    s50 = solve_vortex(canon_model, Grid.radial(50.0, 1024), vortex_n1.conf)
    assert abs(current_integral(canon_model, s50.grid, s50.v_accurate)) < 1e-3


def test_perturbed_solution_breaks_self_duality(canon_model, fields_n1, vortex_n1):
    base = bps_residuals(canon_model, fields_n1)["bps_residual"]
    bad = bps_residuals(canon_model, reconstruct(canon_model, perturbed(vortex_n1, 0.01)))["bps_residual"]
    assert bad > 10.0 * base


def test_anti_self_dual_branch(canon_model, vortex_n1, fields_n1):
    anti = reconstruct(canon_model, vortex_n1, sign=-1)
    np.testing.assert_allclose(anti.F12.values, -fields_n1.F12.values)
    np.testing.assert_allclose(anti.energy_density.values, fields_n1.energy_density.values)


def test_energy_density_nonnegative(fields_n1):
    assert np.all(fields_n1.energy_density.values >= 0.0)


def test_decay_fit_degenerate_and_power_law():
    grid = Grid.radial(100.0, 512)
    with pytest.raises(FitDegenerate):
        decay_fit(np.zeros(grid.shape), grid)
    with np.errstate(divide="ignore"):
        rep = decay_fit(-grid.r ** -2.0, grid, "power", 2.0)
    assert rep.rate == pytest.approx(2.0, rel=1e-10)
    rep = decay_fit(-np.exp(-1.5 * grid.r), grid, "exponential", 1.5)
    assert rep.relative_error < 1e-10


@settings(max_examples=30)
@given(st.floats(0.01, 1.0), st.floats(0.1, 10.0), st.sampled_from([1.0, 2.0, 3.0]))
def test_richardson_order_recovers_power(h, a, p):
    q = [1.0 + a * (h / 2 ** k) ** p for k in range(3)]
    assert richardson_order(*q) == pytest.approx(p, rel=1e-6)


def test_string_observables(canon_model, string_n3):
    fields = reconstruct(canon_model, string_n3)
    assert stress_residuals(canon_model, fields)["stress_residual"] < 1e-3
    K = gauss_curvature(fields)
    assert np.all(np.isfinite(K[fields.grid.interior]))
    cur = curvature(fields, 0.01)
    assert cur["curvature_total"] == pytest.approx(16.0 * math.pi ** 2 * 0.03, rel=3e-2)


def test_summary_keys(canon_model, vortex_n1, string_n1):
    out = summarize(canon_model, vortex_n1)
    for key in ("flux", "energy_direct", "current_integral", "decay", "bps_residual"):
        assert key in out
    out = summarize(canon_model, string_n1)
    for key in ("curvature_total", "stress_residual", "eta_fit"):
        assert key in out
