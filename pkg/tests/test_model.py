import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from bihiggs.errors import ConstraintViolation
from bihiggs.model import T_MIN, abelian_limit, balanced, builtin, canon, polynomial_model

unit_t = st.floats(min_value=1e-6, max_value=1.0, allow_nan=False)


def test_canon_closed_forms(canon_model):
    t = np.array([0.1, 0.5, 1.0])
    np.testing.assert_allclose(canon_model.g_derived(t), (t + 1.0) / (4.0 * t), rtol=1e-14)
    np.testing.assert_allclose(canon_model.w_derived(t), 0.5, rtol=1e-6)
    assert canon_model.lambda1 == pytest.approx(1.0, rel=1e-12)
    assert canon_model.lambda2 == pytest.approx(2.0 / math.sqrt(3.0), rel=1e-12)
    assert canon_model.M_decay == pytest.approx(1.0, rel=1e-12)


def test_rhs_vortex_examples(canon_model):
    assert float(canon_model.rhs_vortex(np.array(1.0))) == 0.0
    assert float(canon_model.rhs_vortex(np.array(0.0))) == pytest.approx(-2.0 / math.sqrt(3.0), abs=1e-12)
    # independent arithmetic at t = 1/e
    t = math.exp(-1.0)
    U = 0.5 * (t - 1.0)
    expected = 2.0 * U / math.sqrt(1.0 - U * U)
    assert expected == pytest.approx(-0.666274, abs=1e-6)
    assert float(canon_model.rhs_vortex(np.array(t))) == pytest.approx(expected, rel=1e-14)


def test_dilation_examples(canon_model):
    assert float(canon_model.dilation(np.array(1.0))) == 1.0
    assert float(canon_model.dilation(np.array(0.0))) == pytest.approx(0.866025, abs=1e-6)
    assert float(canon(b=1e8).dilation(np.array(0.0))) == pytest.approx(1.0, abs=1e-15)


def test_born_infeld_parameter_below_core_value_is_rejected():
    with pytest.raises(ConstraintViolation):
        canon(b=0.4)


@pytest.mark.parametrize("U, G", [([0.0, 1.0], [1.0]), ([-0.5, -0.5], [1.0]), ([-0.5, 0.5], [-1.0])])
def test_invalid_models_are_rejected(U, G):
    with pytest.raises(ConstraintViolation):
        polynomial_model(U, G, 2.0)


def test_unknown_builtin():
    with pytest.raises(ConstraintViolation):
        builtin("nope")


def test_abelian_limit_reduces_to_exponential():
    m = abelian_limit()
    v = np.linspace(-20.0, 0.0, 41)
    np.testing.assert_allclose(m.rhs_of_v(v), np.expm1(v), rtol=1e-10, atol=1e-14)


@given(unit_t)
def test_constraint_closure(t):
    m = canon()
    lhs = 2.0 * t * float(m.g_derived(np.array(t))) - float(m.sqrtG(np.array(t)) * m.U(np.array(t)))
    assert lhs == pytest.approx(1.0, abs=1e-12)


@given(st.floats(0.05, 0.95), st.floats(0.01, 0.04))
def test_w_is_twice_the_derivative_of_tg(t, h):
    m = canon()

    def tg(s):
        return s * float(m.g_derived(np.array(s)))

    fd = 2.0 * (tg(t + h) - tg(t - h)) / (2.0 * h)
    assert float(m.w_derived(np.array(t))) == pytest.approx(fd, rel=1e-6)


@given(st.lists(unit_t, min_size=2, max_size=2, unique=True))
def test_rhs_strictly_increasing(pair):
    m = canon()
    a, b = sorted(pair)
    assert float(m.rhs_vortex(np.array(a))) < float(m.rhs_vortex(np.array(b)))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.2, 2.0), st.floats(0.0, 1.0), st.floats(0.5, 2.0), st.floats(0.0, 1.0))
def test_bracket_lambdas_are_ordered(alpha, beta, g0, g1):
    # U = alpha (t - 1) + beta (t^2 - 1) has U' > 0; G = g0 + g1 t > 0
    U0 = -(alpha + beta)
    b = 2.0 * abs(U0) + 1.0
    try:
        m = polynomial_model([U0, alpha, beta], [g0, g1], b)
    except ConstraintViolation:
        return  # g may fail to be positive; such models are outside the class
    assert m.lambda1 <= m.lambda2
    lo, hi = m.bracket_lambdas()
    assert lo < m.lambda1 and hi > m.lambda2
    t = np.linspace(1e-3, 1.0 - 1e-6, 2001)
    ratio = m.rhs_vortex(t) / (t - 1.0)
    assert np.all(ratio >= m.lambda1 * (1 - 1e-9)) and np.all(ratio <= m.lambda2 * (1 + 1e-9))


@pytest.mark.parametrize("t", [0.25, 0.5, 0.9, 1e-4])
def test_F_matches_quadrature(canon_model, t):
    ref, _ = quad(lambda s: 2.0 * float(canon_model.g_derived(np.array(s))), 1.0, t, epsabs=1e-13, limit=200)
    assert float(canon_model.F_anti(np.array(t))) == pytest.approx(ref, rel=1e-9, abs=1e-12)
    # canon closed form: t/2 + ln(t)/2 - 1/2
    assert ref == pytest.approx(0.5 * t + 0.5 * math.log(t) - 0.5, rel=1e-9)


def test_F_log_slope_and_extrapolation(canon_model):
    kappa = canon_model.F_log_slope
    assert kappa == pytest.approx(0.5, abs=1e-9)
    assert kappa == pytest.approx(2.0 * canon_model.core_current, abs=1e-9)
    assert canon_model.F_regular_zero == pytest.approx(-0.5, abs=1e-8)  # spline table accuracy
    v = np.array([math.log(T_MIN) - 10.0, -60.0])
    np.testing.assert_allclose(canon_model.F_of_v(v), canon_model.F_regular_zero + kappa * v, rtol=1e-9)
    _, n = canon_model.F_of_v(v, count_clamped=True)
    assert n == 2
    assert float(canon_model.F_of_v(np.array(-np.inf))) == -np.inf


def test_balanced_model_has_no_core_current():
    m = balanced()
    assert m.core_current == pytest.approx(0.0, abs=1e-12)
    assert float(m.g_derived(np.array(1e-6))) == pytest.approx(0.5, rel=1e-9)  # 1 + U cancels


def test_U_of_v_keeps_relative_precision_near_vacuum(canon_model):
    v = np.array([-1e-12, -1e-9])
    np.testing.assert_allclose(canon_model.U_of_v(v), 0.5 * np.expm1(v), rtol=1e-12)


def test_dump_columns(canon_model):
    d = canon_model.dump(np.linspace(0.1, 1.0, 5))
    assert set(d) == {"t", "g", "w", "V", "W", "F"}
    assert all(np.all(np.isfinite(x)) for x in d.values())
