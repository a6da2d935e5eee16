"""The acceptance suite behind ``bihiggs verify``.

Each check solves what it needs (runs are cached and shared), compares one
measured quantity with its threshold and returns a :class:`CheckResult`.
The ``full`` profile uses the production grid sizes; ``quick`` shrinks
every grid for a smoke run.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import BiHiggsError, HypothesisViolation
from .geometry import Field, Grid, VortexConfiguration, background_u0
from .model import ModelSpec, abelian_limit, canon
from .observables import (
    bps_residuals,
    curvature,
    decay_fit,
    energy,
    eta_fit,
    flux,
    reconstruct,
    richardson_order,
    stress_residuals,
)
from .strings import core_radius_estimate, find_c, solve_string
from .vortex import VortexSolution, solve_vortex

PROFILES = {
    "full": {"vortex_n": 4096, "string_n": 8192, "oracle_n": 32768, "cart_L": 60.0, "cart_n": 801,
             "cart_window": (1.0, 50.0), "richardson_n": (1025, 2049, 4097), "gating_n": 8192},
    "quick": {"vortex_n": 1024, "string_n": 2048, "oracle_n": 8192, "cart_L": 20.0, "cart_n": 201,
              "cart_window": (1.0, 15.0), "richardson_n": (513, 1025, 2049), "gating_n": 8192},
}
R_MAX = 100.0
STRING_G = 0.01


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.number:2d} {self.name}: {self.detail}"

    def as_dict(self) -> dict:
        return asdict(self)


class Suite:
    def __init__(self, model: ModelSpec | None = None, profile: str = "full", tol: float = 1e-10, seed: int = 0):
        if profile not in PROFILES:
            raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        self.model = canon() if model is None else model
        self.p = PROFILES[profile]
        self.tol = tol
        self.seed = seed
        self._cache: dict = {}
        self.timings: dict = {}

    # -- cached runs ----------------------------------------------------------
    def vortex(self, N: int, model: ModelSpec | None = None, n: int | None = None):
        model = self.model if model is None else model
        n = self.p["vortex_n"] if n is None else n
        key = ("vortex", model.name, model.b, N, n)
        if key not in self._cache:
            conf = VortexConfiguration.build([(0.0, 0.0)], [N])
            t0 = time.perf_counter()
            sol = solve_vortex(model, Grid.radial(R_MAX, n), conf, tol=self.tol)
            self.timings[key] = time.perf_counter() - t0
            self._cache[key] = sol
        return self._cache[key]

    def string(self, N: int, G: float = STRING_G, n: int | None = None):
        n = self.p["string_n"] if n is None else n
        key = ("string", self.model.name, N, G, n)
        if key not in self._cache:
            conf = VortexConfiguration.build([(0.0, 0.0)], [N], newton_g=G)
            t0 = time.perf_counter()
            sol = solve_string(self.model, Grid.radial(R_MAX, n), conf, tol=self.tol)
            self.timings[key] = time.perf_counter() - t0
            self._cache[key] = sol
        return self._cache[key]

    # -- criteria -------------------------------------------------------------
    def flux_quantization(self) -> CheckResult:
        worst, times = 0.0, []
        for N in (1, 2, 3):
            sol = self.vortex(N)
            phi = flux(reconstruct(self.model, sol), sol.conf)["flux"]
            worst = max(worst, abs(phi - 2 * math.pi * N) / (2 * math.pi * N))
            times.append(self.timings[("vortex", self.model.name, self.model.b, N, self.p["vortex_n"])])
        ok = worst < 1e-2 and max(times) < 10.0
        return CheckResult(1, "flux quantization", ok, worst, 1e-2,
                           f"max rel err {worst:.3e} (< 1e-2), slowest run {max(times):.2f} s (< 10 s)")

    def energy_quantization(self) -> CheckResult:
        worst, vals = 0.0, []
        for N in (1, 2, 3):
            E = energy(reconstruct(self.model, self.vortex(N)))
            vals.append(E / (2 * math.pi * N))
            worst = max(worst, abs(E - 2 * math.pi * N) / (2 * math.pi * N))
        return CheckResult(2, "energy quantization", worst < 2e-2, worst, 2e-2,
                           f"max rel err {worst:.3e} (< 2e-2); E/(2 pi N) = {', '.join(f'{v:.6f}' for v in vals)}")

    def decay_rate(self) -> CheckResult:
        worst, parts = 0.0, []
        for model in (canon(1.0), abelian_limit(1e6)):
            sol = self.vortex(1, model)
            rep = decay_fit(sol.v_accurate, sol.grid, "exponential", math.sqrt(model.M_decay))
            worst = max(worst, rep.relative_error)
            parts.append(f"{model.name} rate {rep.rate:.4f}")
        return CheckResult(3, "vortex decay rate", worst < 0.1, worst, 0.1,
                           f"{'; '.join(parts)}; max rel err {worst:.3e} (< 0.1)")

    def bracket_invariant(self) -> CheckResult:
        hard = 0
        for N in (1, 2, 3):
            hard += self.vortex(N).checks["bracket_hard_violations"]
        return CheckResult(4, "bracket invariant", hard == 0, hard, 0, f"{hard} hard violations (must be 0)")

    def string_curvature(self) -> CheckResult:
        worst, times = 0.0, []
        for N in (1, 3):
            sol = self.string(N)
            K = curvature(reconstruct(self.model, sol), STRING_G)["curvature_total"]
            target = 16 * math.pi ** 2 * STRING_G * N
            worst = max(worst, abs(K - target) / target)
            times.append(self.timings[("string", self.model.name, N, STRING_G, self.p["string_n"])])
        ok = worst < 3e-2 and max(times) < 120.0
        return CheckResult(5, "string curvature quantization", ok, worst, 3e-2,
                           f"max rel err {worst:.3e} (< 3e-2), slowest ladder {max(times):.1f} s (< 120 s)")

    def conformal_exponent(self) -> CheckResult:
        worst = 0.0
        for N in (1, 3):
            sol = self.string(N)
            worst = max(worst, eta_fit(sol.eta.values, sol.grid, sol.conf)["relative_error"])
        return CheckResult(6, "conformal exponent", worst < 0.05, worst, 0.05, f"max rel err {worst:.3e} (< 0.05)")

    def string_chain(self) -> CheckResult:
        hard = sum(self.string(N).checks["chain_hard_violations"] for N in (1, 3))
        return CheckResult(7, "string bracket chain", hard == 0, hard, 0, f"{hard} hard violations (must be 0)")

    def stress(self) -> CheckResult:
        worst = max(stress_residuals(self.model, reconstruct(self.model, self.string(N)))["stress_residual"]
                    for N in (1, 3))
        return CheckResult(8, "stress-tensor vanishing", worst < 1e-3, worst, 1e-3, f"sup rel stress {worst:.3e} (< 1e-3)")

    def oracle_equivalence(self) -> CheckResult:
        conf = VortexConfiguration.build([(0.0, 0.0)], [1])
        oracle = self.vortex(1, n=self.p["oracle_n"])
        grid = Grid.cartesian(self.p["cart_L"], self.p["cart_n"])
        cart = solve_vortex(self.model, grid, conf, tol=self.tol)
        lo, hi = self.p["cart_window"]
        err = cartesian_vs_radial(cart, oracle, lo, hi)
        return CheckResult(9, "oracle equivalence", err < 1e-3, err, 1e-3,
                           f"sup |v_cart - v_radial| on r in [{lo:g}, {hi:g}] = {err:.3e} (< 1e-3)")

    def hypothesis_gating(self) -> CheckResult:
        # near the bound the core radius is exp(-8 pi G c / (1 - 8 pi G N)); grade the grid to resolve it
        n = self.p["gating_n"]
        inside = VortexConfiguration.build([(0.0, 0.0)], [1], newton_g=0.99 / (8 * math.pi))
        c = find_c(self.model, Grid.radial(R_MAX, n), inside)
        grid = Grid.radial_graded(R_MAX, n, 1e-3 * core_radius_estimate(inside, c))
        detail = ""
        try:
            sol = solve_string(self.model, grid, inside, tol=self.tol)
            K = curvature(reconstruct(self.model, sol), inside.newton_g)["curvature_total"]
            ok_inside = abs(K / (16 * math.pi ** 2 * inside.newton_g) - 1.0) < 3e-2
            detail = f" (curvature ratio {K / (16 * math.pi ** 2 * inside.newton_g):.6f})"
        except BiHiggsError as exc:
            ok_inside = False
            detail = f" ({type(exc).__name__}: {exc})"
        rejected = False
        try:
            outside = VortexConfiguration.build([(0.0, 0.0)], [1], newton_g=1.01 / (8 * math.pi))
            solve_string(self.model, Grid.radial(R_MAX, n), outside, tol=self.tol)
        except HypothesisViolation:
            rejected = True
        ok = ok_inside and rejected
        return CheckResult(10, "hypothesis gating", ok, float(ok), 1.0,
                           f"8 pi G N = 0.99 solved: {ok_inside}{detail}; 1.01 rejected: {rejected}")

    def negative_controls(self) -> CheckResult:
        sol = self.vortex(1)
        base = bps_residuals(self.model, reconstruct(self.model, sol))["bps_residual"]
        sign = float(np.random.default_rng(self.seed).choice([-1.0, 1.0]))
        pert = bps_residuals(self.model, reconstruct(self.model, perturbed(sol, sign * 0.01)))["bps_residual"]
        ratio = pert / base
        mono = sum(self.vortex(N).report.monotone_violations for N in (1, 2, 3))
        mono += sum(r.monotone_violations for N in (1, 3) for _, r in self.string(N).delta_ladder)
        ok = ratio >= 10.0 and mono == 0
        return CheckResult(11, "negative controls", ok, ratio, 10.0,
                           f"perturbed/converged BPS residual {ratio:.3e} (>= 10); monotonicity violations {mono}")

    def mesh_convergence(self) -> CheckResult:
        orders = {}
        for kind in ("vortex", "string"):
            vals = []
            for n in self.p["richardson_n"]:
                sol = self.vortex(1, n=n) if kind == "vortex" else self.string(1, n=n)
                f = reconstruct(self.model, sol)
                vals.append((flux(f, sol.conf)["flux"], energy(f, "flat" if kind == "vortex" else "conformal")))
            vals = np.array(vals)
            orders[f"{kind} flux"] = richardson_order(*vals[:, 0])
            orders[f"{kind} energy"] = richardson_order(*vals[:, 1])
        ok = all(1.7 <= p <= 2.3 for p in orders.values())
        worst = max(orders.values(), key=lambda p: abs(p - 2.0))
        return CheckResult(12, "mesh convergence", ok, worst, 2.0,
                           "orders " + ", ".join(f"{k} {p:.3f}" for k, p in orders.items()) + " (in [1.7, 2.3])")

    CHECKS = ("flux_quantization", "energy_quantization", "decay_rate", "bracket_invariant", "string_curvature",
              "conformal_exponent", "string_chain", "stress", "oracle_equivalence", "hypothesis_gating",
              "negative_controls", "mesh_convergence")

    def run(self, enabled=None) -> list[CheckResult]:
        names = self.CHECKS if not enabled else [c for c in self.CHECKS if c in set(enabled)]
        return [getattr(self, name)() for name in names]


def cartesian_vs_radial(cart: VortexSolution, oracle: VortexSolution, lo: float, hi: float) -> float:
    """sup |v_cart - v_radial| over cartesian nodes with lo <= |x| <= hi (cubic interpolation of the oracle)."""
    r = cart.grid.r
    sel = (r >= lo) & (r <= hi)
    ro = oracle.grid.r
    spline = CubicSpline(ro[1:], oracle.v.values[1:])
    return float(np.max(np.abs(cart.v.values[sel] - spline(r[sel]))))


def perturbed(sol, amount: float):
    """Copy of a solution with ``u`` scaled by ``1 + amount`` (v follows)."""
    grid = sol.grid
    u = sol.u.values * (1.0 + amount)
    v = u + background_u0(grid, sol.conf).values
    return VortexSolution(Field(grid, u, "u"), Field(grid, v, "v"), sol.model, sol.conf, sol.report)
