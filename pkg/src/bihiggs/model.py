"""Generalized Born-Infeld-Higgs models.

A model is fixed by two user functions of ``t = |phi|^2``: the potential
generator ``U`` (with its derivative) and the gauge-kinetic modifier ``G``,
plus the Born-Infeld parameter ``b``. Self-duality then forces

    g(t) = (1 + sqrt(G) U) / (2 t),   w(t) = 2 (t g)',   V(t) = b^2 (1 - W(t)),

with the dilation factor ``W(t) = sqrt(1 - U(t)^2 / b^2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar

from .errors import ConstraintViolation, DomainError

ArrayFn = Callable[[np.ndarray], np.ndarray]

N_SAMPLE = 10_001
SAFETY_MARGIN = 0.01
T_MIN = 1e-10
T_OVERSHOOT = 1e-3
# below this |t - 1| the nonlinearity is evaluated from expm1 and U'
_SMALL = 1e-4


def _vectorize(fn):
    def wrapped(t):
        t = np.asarray(t, dtype=float)
        out = np.asarray(fn(t), dtype=float)
        if out.shape != t.shape:
            out = np.broadcast_to(out, t.shape).copy() if out.ndim == 0 else np.vectorize(fn)(t)
        return out

    return wrapped


@dataclass(frozen=True, eq=False)
class ModelSpec:
    U: ArrayFn
    U_prime: ArrayFn
    G: ArrayFn
    b: float
    name: str = "custom"
    bounds: dict = field(default_factory=dict)
    _F_spline: object = None
    _F_zero: float = 0.0

    # -- derived functions -------------------------------------------------
    def sqrtG(self, t):
        return np.sqrt(self.G(t))

    def g_derived(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return (1.0 + self.sqrtG(t) * self.U(t)) / (2.0 * t)

    def w_derived(self, t, step: float = 1e-6):
        """w = 2 (t g)' = d/dt [sqrt(G) U]; the sqrt(G) slope is central-differenced."""
        t = np.asarray(t, dtype=float)
        dsg = (self.sqrtG(t + step) - self.sqrtG(np.maximum(t - step, 0.0))) / (
            t + step - np.maximum(t - step, 0.0)
        )
        return self.sqrtG(t) * self.U_prime(t) + self.U(t) * dsg

    def V_derived(self, t):
        return self.b ** 2 * (1.0 - self.dilation(t))

    def dilation(self, t):
        """W(t) = sqrt(1 - U(t)^2 / b^2)."""
        arg = 1.0 - (np.asarray(self.U(t)) / self.b) ** 2
        if np.any(arg <= 0.0):
            raise DomainError("|U(t)| >= b: the dilation factor is not real")
        return np.sqrt(arg)

    def rhs_vortex(self, t):
        """2 U(t) / (sqrt(G(t)) W(t))."""
        return 2.0 * self.U(t) / (self.sqrtG(t) * self.dilation(t))

    @property
    def core_current(self) -> float:
        """lim_{t->0} t g(t) = (1 + sqrt(G(0)) U(0)) / 2."""
        return float(0.5 * (1.0 + self.sqrtG(np.array(0.0)) * self.U(np.array(0.0))))

    # -- accurate evaluation in terms of v = ln t --------------------------
    def U_of_v(self, v):
        """U(e^v), accurate to full relative precision as v -> 0."""
        v = np.asarray(v, dtype=float)
        s = np.expm1(v)
        t = np.exp(v)
        small = np.abs(s) < _SMALL
        out = np.array(self.U(t), dtype=float, copy=True)
        if np.any(small):
            ss = s[small]
            out[small] = ss * self.U_prime(1.0 + 0.5 * ss)
        return out

    def rhs_of_v(self, v):
        """2 U(e^v) / (sqrt(G) W) with v possibly -inf (then e^v = 0)."""
        t = np.exp(v)
        return 2.0 * self.U_of_v(v) / (self.sqrtG(t) * self.dilation(t))

    def F_of_v(self, v, count_clamped: bool = False):
        """Antiderivative of 2g evaluated at e^v, normalised by F(1) = 0.

        dF(e^v)/dv = 1 + sqrt(G) U, which is smooth in v and tends to
        ``F_log_slope`` as v -> -inf; below ln(T_MIN) the table is continued
        linearly with that slope, so F(0) = -inf.
        """
        v = np.asarray(v, dtype=float)
        vmin = math.log(T_MIN)
        clamped = v < vmin
        vc = np.where(clamped, vmin, v)
        out = self._F_spline(vc) - self._F_zero
        small = np.abs(vc) < _SMALL
        if np.any(small):
            d1 = self._F_spline.derivative(1)(0.0)
            d2 = self._F_spline.derivative(2)(0.0)
            out = np.where(small, d1 * vc + 0.5 * d2 * vc ** 2, out)
        if np.any(clamped):
            with np.errstate(invalid="ignore"):
                out = np.where(clamped, out + self.F_log_slope * (v - vmin), out)
        if count_clamped:
            return out, int(np.count_nonzero(clamped))
        return out

    @property
    def F_log_slope(self) -> float:
        """kappa = lim_{t->0} 2 t g(t) = 1 + sqrt(G(0)) U(0), the coefficient of ln t in F."""
        return float(self._F_spline.derivative(1)(math.log(T_MIN)))

    @property
    def F_regular_zero(self) -> float:
        """lim_{t->0} (F(t) - kappa ln t), the finite part of F at a vortex point."""
        vmin = math.log(T_MIN)
        return float(self._F_spline(vmin) - self._F_zero - self.F_log_slope * vmin)

    def F_anti(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return self.F_of_v(np.log(t))

    # -- solver constants ---------------------------------------------------
    @property
    def lambda1(self) -> float:
        return self.bounds["lambda1"]

    @property
    def lambda2(self) -> float:
        return self.bounds["lambda2"]

    @property
    def M_decay(self) -> float:
        return self.bounds["M_decay"]

    def bracket_lambdas(self) -> tuple[float, float]:
        """Bracket parameters built from the margin-widened bounds."""
        return self.bounds["lambda1_safe"], self.bounds["lambda2_safe"]

    def dump(self, t):
        t = np.asarray(t, dtype=float)
        return {
            "t": t,
            "g": self.g_derived(t),
            "w": self.w_derived(t),
            "V": self.V_derived(t),
            "W": self.dilation(t),
            "F": self.F_anti(t),
        }


def _refined_extremum(fn, t, vals, which):
    i = int(np.argmin(vals) if which == "min" else np.argmax(vals))
    lo, hi = t[max(i - 1, 0)], t[min(i + 1, t.size - 1)]
    sign = 1.0 if which == "min" else -1.0
    res = minimize_scalar(lambda s: sign * float(fn(np.array(s))), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    best = sign * res.fun if res.success else vals[i]
    return min(best, vals[i]) if which == "min" else max(best, vals[i])


def build_model(U, U_prime, G, b: float, name: str = "custom") -> ModelSpec:
    """Derive g, w, V from (U, G, b), check the assumptions and compute the bounds."""
    if not b > 0:
        raise ConstraintViolation(f"Born-Infeld parameter must be positive, got {b}")
    U, U_prime, G = _vectorize(U), _vectorize(U_prime), _vectorize(G)
    t = np.linspace(0.0, 1.0, N_SAMPLE)
    u_vals, up_vals, g_vals = U(t), U_prime(t), G(t)
    if not np.all(np.isfinite(u_vals)) or not np.all(np.isfinite(up_vals)) or not np.all(np.isfinite(g_vals)):
        raise ConstraintViolation("U, U' and G must be finite on [0, 1]")
    if abs(float(U(np.array(1.0)))) > 1e-12:
        raise ConstraintViolation(f"U(1) must vanish, got {float(U(np.array(1.0)))!r}")
    if np.any(up_vals <= 0):
        raise ConstraintViolation("U' must be positive on [0, 1]")
    if np.any(g_vals <= 0):
        raise ConstraintViolation("G must be positive on [0, 1]")
    U0 = float(U(np.array(0.0)))
    if abs(U0) >= b:
        raise ConstraintViolation(f"|U(0)| = {abs(U0):g} must be smaller than b = {b:g}")
    interior = t[1:-1]
    g_int = (1.0 + np.sqrt(G(interior)) * U(interior)) / (2.0 * interior)
    if np.any(g_int <= 0):
        raise ConstraintViolation("derived g must be positive on (0, 1)")

    m_U = _refined_extremum(U_prime, t, up_vals, "min")
    M_U = _refined_extremum(U_prime, t, up_vals, "max")
    m_G = _refined_extremum(G, t, g_vals, "min")
    M_G = _refined_extremum(G, t, g_vals, "max")
    shrink, grow = 1.0 - SAFETY_MARGIN, 1.0 + SAFETY_MARGIN
    dil0 = 1.0 - U0 ** 2 / b ** 2
    bounds = {
        "m_U": m_U,
        "M_U": M_U,
        "m_G": m_G,
        "M_G": M_G,
        "lambda1": 2.0 * m_U / math.sqrt(M_G),
        "lambda2": 2.0 * M_U / math.sqrt(m_G * dil0),
        "lambda1_safe": 2.0 * m_U * shrink / math.sqrt(M_G * grow),
        "lambda2_safe": 2.0 * M_U * grow / math.sqrt(m_G * shrink * dil0),
        "M_decay": 2.0 * float(U_prime(np.array(1.0))) / math.sqrt(float(G(np.array(1.0)))),
    }

    # F(e^v) = int_0^v (1 + sqrt(G) U)(e^s) ds, tabulated on a uniform v grid
    vmin, vmax = math.log(T_MIN), math.log1p(T_OVERSHOOT)
    vs = np.linspace(vmin, vmax, 60_001)
    es = np.exp(vs)
    spline = CubicSpline(vs, 1.0 + np.sqrt(G(es)) * U(es)).antiderivative()
    bounds = {k: float(v) for k, v in bounds.items()}
    return ModelSpec(U, U_prime, G, float(b), name, bounds, spline, float(spline(0.0)))


def polynomial_model(U_coeffs, G_coeffs, b: float, name: str = "polynomial") -> ModelSpec:
    """Model from ascending-power coefficient lists for U and G."""
    pU = Polynomial(np.asarray(U_coeffs, dtype=float))
    pG = Polynomial(np.asarray(G_coeffs, dtype=float))
    return build_model(pU, pU.deriv(), pG, b, name)


def canon(b: float = 1.0) -> ModelSpec:
    """U(t) = (t - 1)/2, G = 1: g = (t + 1)/(4t), w = 1/2."""
    return polynomial_model([-0.5, 0.5], [1.0], b, "canon")


def abelian_limit(b: float = 1e6) -> ModelSpec:
    m = polynomial_model([-0.5, 0.5], [1.0], b, "abelian-limit")
    return m


def balanced(b: float = 2.0) -> ModelSpec:
    """U(t) = t - 1, G = 1: g = 1/2 is regular at t = 0 (no core current)."""
    return polynomial_model([-1.0, 1.0], [1.0], b, "balanced")


REGISTRY = {
    "canon": canon,
    "abelian-limit": abelian_limit,
    "balanced": balanced,
}


def builtin(name: str, b: float | None = None) -> ModelSpec:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ConstraintViolation(f"unknown builtin model {name!r}; choose from {sorted(REGISTRY)}") from None
    return factory() if b is None else factory(b)
