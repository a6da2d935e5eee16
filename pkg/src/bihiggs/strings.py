"""Self-dual cosmic strings: the vortex equation coupled to a conformal metric.

With the harmonic gauge function held at a constant ``c`` the conformal
exponent is, in terms of the regular part ``u``,

    eta = 8 pi G (2 c - F(e^v) + u) - 8 pi G sum_s m_s ln(1 + |x - p_s|^2),

and the governing equation reads ``Delta u = 2 e^eta U / (sqrt(G) W) + g_bg``.
It is solved on a ladder of regularised backgrounds ``u_{0,delta}``:
``u = 0`` is a subsolution once ``c`` is large enough and ``-u_{0,delta}`` is
a supersolution. Because the nonlinearity decreases with ``delta``, the
solution of one rung is a subsolution of the next, so every later rung is an
ascending monotone iteration warm-started from its predecessor.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .errors import (
    BracketViolation,
    DomainError,
    HypothesisViolation,
    LadderStall,
    SearchExhausted,
    SolverError,
)
from .geometry import (
    Field,
    Grid,
    VortexConfiguration,
    background_g,
    background_u0,
    check_grid,
    laplacian_u0_delta,
    log_one_plus_dist2,
)
from .iterate import MonotoneProblem, SolveReport, discretization_slack, monotone_solve, rim_data
from .model import ModelSpec
from .vortex import far_field_tail, solve_vortex

log = logging.getLogger(__name__)

DEFAULT_LADDER = (0.4, 0.2, 0.1, 0.05, 0.02, 0.01, 0.0)
C_SCHEDULE = (0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)
T_EPS = 1e-6  # discrete solutions may exceed the vacuum by O(h^2); the F table reaches 1e-3
RUNG_CONSTANT = 1.0
EXTENSION_FACTOR = 100.0


@dataclass(eq=False)
class StringSolution:
    u: Field
    v: Field
    eta: Field
    c: float
    delta_ladder: list
    model: ModelSpec
    conf: VortexConfiguration
    v_tail: np.ndarray | None = None
    checks: dict = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.u.grid

    @property
    def v_accurate(self) -> np.ndarray:
        return self.v.values if self.v_tail is None else self.v_tail

    @property
    def report(self) -> SolveReport:
        return self.delta_ladder[-1][1]


def check_hypothesis(conf: VortexConfiguration) -> None:
    if not conf.gravity_bound < 1.0:
        raise HypothesisViolation(
            f"8 pi G N = {conf.gravity_bound:.6g} must be below 1 (G = {conf.newton_g:g}, N = {conf.N})"
        )


def _cell_power_average(grid: Grid, alpha: float) -> float:
    """Average of |x - p|^(-alpha) over the control volume of a grid node at p."""
    if not alpha < 2.0:
        raise DomainError(f"e^eta ~ |x|^(-{alpha:g}) is not integrable at a vortex point")
    if grid.is_radial:
        R = 0.5 * grid.r[1]
        return 2.0 * R ** (-alpha) / (2.0 - alpha)
    # square of side h: 8 int_0^{pi/4} int_0^{h / (2 cos th)} r^(1 - alpha) dr dth / h^2
    val, _ = quad(lambda th: (2.0 * math.cos(th)) ** (alpha - 2.0), 0.0, math.pi / 4.0)
    return 8.0 * val / (2.0 - alpha) * grid.h ** (-alpha)


class _Exponent:
    """Conformal exponent eta(u) on the nodes selected by ``sel``.

    Near a vortex of multiplicity m, F(e^v) = kappa v + O(1) makes
    ``e^eta ~ |x - p|^(-16 pi G kappa m)``, an integrable singularity. At a
    node sitting on a vortex point the exponent is assembled from its
    regular part plus the log of the exact cell average of that power.
    """

    def __init__(self, model: ModelSpec, grid: Grid, conf: VortexConfiguration, c: float, delta: float, sel=None):
        sel = np.ones(grid.shape, bool) if sel is None else sel
        self.model, self.c = model, c
        self.a = 8.0 * math.pi * conf.newton_g
        self.u0d = background_u0(grid, conf, delta).values[sel]
        self.log_q = log_one_plus_dist2(grid, conf)[sel]
        self.nodes = ~np.isfinite(self.u0d)
        self.node_const = np.zeros(int(self.nodes.sum()))
        if not np.any(self.nodes) or self.a == 0.0:
            return
        kappa = model.F_log_slope
        self.kappa = kappa
        d2 = np.stack([grid.dist2(p)[sel][self.nodes] for p in conf.points])
        own = np.argmin(d2, axis=0)
        for j, s_own in enumerate(own):
            other = sum(m * math.log(d2[s, j] / (1.0 + d2[s, j]))
                        for s, m in enumerate(conf.multiplicities) if s != s_own)
            alpha = 2.0 * self.a * kappa * conf.multiplicities[s_own]
            self.node_const[j] = (self.a * (2.0 * c - model.F_regular_zero - kappa * other - self.log_q[self.nodes][j])
                                  + math.log(_cell_power_average(grid, alpha)))

    def __call__(self, u):
        v = u + self.u0d
        with np.errstate(invalid="ignore"):
            eta = self.a * (2.0 * self.c - self.model.F_of_v(v) + u - self.log_q)
        if np.any(self.nodes):
            eta = np.where(self.nodes, 0.0, eta)
            if self.a != 0.0:
                eta[self.nodes] = self.a * (1.0 - self.kappa) * u[self.nodes] + self.node_const
        return eta, v


def string_nonlinearity(model: ModelSpec, grid: Grid, conf: VortexConfiguration, c: float, delta: float):
    """``f(u)`` on interior nodes for the ``delta``-regularised equation."""
    inside = grid.interior
    g = background_g(grid, conf).values[inside]
    exponent = _Exponent(model, grid, conf, c, delta, inside)

    def f(u):
        eta, v = exponent(u)
        if np.any(v > T_EPS):
            raise DomainError(f"|phi|^2 = e^(u + u0_delta) exceeds 1 + {T_EPS:g}")
        t = np.exp(v)
        return 2.0 * np.exp(eta) * model.U_of_v(v) / (model.sqrtG(t) * model.dilation(t)) + g

    return f


def rhs_string(model: ModelSpec, conf: VortexConfiguration, c: float, delta: float, u: Field) -> Field:
    """Right-hand side of the regularised string equation at every node (rim included)."""
    grid = u.grid
    eta, v = _Exponent(model, grid, conf, c, delta)(u.values)
    if np.any(v > T_EPS):
        raise DomainError(f"|phi|^2 = e^(u + u0_delta) exceeds 1 + {T_EPS:g}")
    t = np.exp(v)
    out = 2.0 * np.exp(eta) * model.U_of_v(v) / (model.sqrtG(t) * model.dilation(t)) + background_g(grid, conf).values
    return Field(grid, out, "rhs_string")


def subsolution_margin(model: ModelSpec, grid: Grid, conf: VortexConfiguration, c: float, delta: float) -> float:
    """max over interior nodes of f(0, x); negative means u = 0 is a subsolution."""
    f = string_nonlinearity(model, grid, conf, c, delta)
    return float(np.max(f(np.zeros(int(grid.interior.sum())))))


def find_c(model: ModelSpec, grid: Grid, conf: VortexConfiguration, delta: float = DEFAULT_LADDER[0],
           schedule=C_SCHEDULE) -> float:
    """Smallest ``c`` on the schedule for which ``u = 0`` is a subsolution at level ``delta``."""
    check_hypothesis(conf)
    if not 0.0 < delta < 0.5:
        raise ValueError(f"the c search needs 0 < delta < 1/2, got {delta}")
    for c in schedule:
        if subsolution_margin(model, grid, conf, c, delta) < 0.0:
            return float(c)
    raise SearchExhausted(
        f"no c <= {schedule[-1]:g} makes u = 0 a subsolution (grid too coarse or hypothesis too tight)"
    )


def conformal_exponent(model: ModelSpec, conf: VortexConfiguration, c: float, u: Field) -> Field:
    """eta from the regular form; at vortex nodes e^eta is the cell average of its integrable singularity."""
    eta, _ = _Exponent(model, u.grid, conf, c, 0.0)(u.values)
    return Field(u.grid, eta, "eta")


def conformal_factor(model: ModelSpec, conf: VortexConfiguration, c: float, v: Field,
                     u: Field | None = None) -> Field:
    """e^eta from ``v``; at vortex nodes the regular part ``u`` is needed, else they are NaN."""
    grid = v.grid
    if u is None:
        u0 = background_u0(grid, conf).values
        with np.errstate(invalid="ignore"):
            reg = np.where(np.isfinite(u0), v.values - u0, np.nan)
        u = Field(grid, reg, "u")
    return Field(grid, np.exp(conformal_exponent(model, conf, c, u).values), "exp_eta")


def _chain_violations(grid: Grid, u: np.ndarray, u0d: np.ndarray, u0: np.ndarray, slack: np.ndarray) -> dict:
    """Counts for 0 <= u <= -u_{0,delta} <= -u0 beyond (hard) and without (soft) slack."""
    with np.errstate(invalid="ignore"):
        upper = -u0d
        hard = np.count_nonzero(u < -slack) + np.count_nonzero(u > upper + slack)
        hard += np.count_nonzero(upper > -u0 + slack)
        soft = np.count_nonzero(u < 0) + np.count_nonzero(u > upper)
    return {"hard": int(hard), "soft": int(soft)}


def core_radius_estimate(conf: VortexConfiguration, c: float) -> float:
    """Coordinate size of a string core, ``exp(-8 pi G c / (1 - 8 pi G N))``.

    Outside the core ``u ~ -u0`` and ``e^eta ~ e^{16 pi G c} |x|^{-16 pi G N}``;
    the core ends where that coupling times ``|x|^2`` is of order one. Near
    the gravity bound the core shrinks exponentially.
    """
    a = conf.gravity_bound
    if conf.newton_g == 0.0:
        return 1.0
    return math.exp(-8.0 * math.pi * conf.newton_g * c / (1.0 - a))


def min_node_distance2(grid: Grid, conf: VortexConfiguration) -> float:
    """Smallest positive squared distance between a vortex point and a grid node."""
    best = math.inf
    for p in conf.points:
        d2 = grid.dist2(p)
        best = min(best, float(np.min(d2[d2 > 0.0])))
    return best


def extension_rungs(last: float, d2_min: float, eps_core: float, factor: float = EXTENSION_FACTOR) -> list:
    """Geometric rungs below ``last``, stopping where the grid no longer sees delta.

    ``u_{0,delta}`` differs from ``u0`` only where ``|x - p|^2 <~ delta``; below
    ``10 d2_min`` no node other than the vortex itself resolves the
    difference, and rungs far below the squared core radius add nothing.
    """
    floor = max(10.0 * d2_min, 1e-4 * eps_core ** 2)
    out = []
    delta = last / factor
    while delta > floor:
        out.append(delta)
        delta /= factor
    return out


def solve_string(model: ModelSpec, grid: Grid, conf: VortexConfiguration, tol: float = 1e-10,
                 ladder=DEFAULT_LADDER, max_iter: int = 50_000, rung_constant: float = RUNG_CONSTANT,
                 threads: int = 2) -> StringSolution:
    """Solve the gravitating equation through the delta ladder."""
    check_hypothesis(conf)
    check_grid(grid, conf)
    ladder = tuple(float(d) for d in ladder)
    if not ladder or ladder[-1] != 0.0 or any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError("the delta ladder must decrease strictly and end at 0")
    inside = grid.interior
    u0 = background_u0(grid, conf).values

    if conf.newton_g == 0.0:
        # the equation is the flat one; u = 0 is not a subsolution there, so use the vortex brackets
        vs = solve_vortex(model, grid, conf, tol=tol, max_iter=max_iter, threads=threads)
        c = 0.0 if conf.c == "auto" else float(conf.c)
        eta = Field(grid, np.zeros(grid.shape), "eta")
        return StringSolution(vs.u, vs.v, eta, c, [(0.0, vs.report)], model, conf, vs.v_tail,
                              {**vs.checks, "delegated_to_vortex": True})

    if conf.c == "auto":
        c = find_c(model, grid, conf, ladder[0])
        c_verified = True
    else:
        c = float(conf.c)
        c_verified = subsolution_margin(model, grid, conf, c, ladder[0]) < 0.0
        if not c_verified:
            log.warning("fixed c = %g does not make u = 0 a subsolution at delta = %g", c, ladder[0])

    rungs: list = []
    chain = {"hard": 0, "soft": 0}
    consistency = []
    admissibility = []
    monotone = 0
    prev = None
    prev_delta = None
    zero = np.zeros(grid.shape)
    g_abs = np.abs(background_g(grid, conf).values)

    def run_rung(delta):
        f = string_nonlinearity(model, grid, conf, c, delta)
        u0d = background_u0(grid, conf, delta).values
        data = rim_data(grid, conf, delta)
        with np.errstate(invalid="ignore"):
            scale = g_abs + np.abs(np.nan_to_num(laplacian_u0_delta(grid, conf, delta), posinf=0.0, neginf=0.0))
        slack = np.maximum(discretization_slack(grid, scale), 20.0 * tol)
        upper = -u0d
        descend = MonotoneProblem(grid, f, zero, upper, tol=tol, max_iter=max_iter, slack=slack,
                                  name=f"u_delta={delta:g}", boundary=data)
        if prev is None:
            return monotone_solve(descend), descend, u0d, slack
        start = np.minimum(prev, upper)
        hi = np.where(np.isfinite(upper), upper, start + 1.0)
        problem = MonotoneProblem(
            grid, f, start, upper, tol=tol, max_iter=max_iter, slack=slack, name=f"u_delta={delta:g}",
            boundary=data, direction="up", K_range=(start[inside], hi[inside]),
            admissible_sides=("sub", "super") if delta > 0 else ("sub",),
        )
        try:
            return monotone_solve(problem), problem, u0d, slack
        except BracketViolation:
            if delta == 0.0:
                raise
            log.info("warm start not admissible at delta = %g; descending from -u0_delta", delta)
            return monotone_solve(descend), descend, u0d, slack

    pending = list(ladder)
    extended = False
    eps_core = core_radius_estimate(conf, c)
    d2_min = min_node_distance2(grid, conf)
    while pending:
        delta = pending.pop(0)
        try:
            rep, problem, u0d, slack = run_rung(delta)
        except SolverError as exc:
            if delta != 0.0 or prev is None:
                raise
            extra = [] if extended else extension_rungs(prev_delta, d2_min, eps_core)
            if not extra:
                raise SolverError(
                    f"the delta = 0 rung failed after the ladder reached {prev_delta:g} ({exc}); estimated "
                    f"core radius {eps_core:.2e} against smallest node distance {math.sqrt(d2_min):.2e}: "
                    "grade the grid towards the vortices (radial 'stretch')"
                ) from exc
            log.info("delta = 0 rung failed; continuing the ladder to %g", extra[-1])
            extended = True
            pending = extra + [0.0]
            continue
        u = rep.solution.values
        counts = _chain_violations(grid, u, u0d, u0, slack)
        chain["hard"] += counts["hard"]
        chain["soft"] += counts["soft"]
        monotone += rep.monotone_violations
        admissibility.append({"delta": delta, "sub_min": rep.residual_sub, "super_max": rep.residual_super,
                              "direction": problem.direction})
        if prev is not None:
            outer = inside & (grid.r >= 0.5 * grid.extent)
            gap = float(np.max(np.abs(u - prev)[outer]))
            ratio = gap / (prev_delta - delta)
            consistency.append({"delta": delta, "outer_gap": gap, "ratio": ratio})
            if ratio > rung_constant and gap > 10.0 * tol:  # gaps below the iteration tolerance are noise
                raise LadderStall(
                    f"rungs {prev_delta:g} -> {delta:g} differ by {gap:.3e} on the outer half "
                    f"(ratio {ratio:.3e} > {rung_constant:g})"
                )
        rungs.append((delta, rep))
        prev, prev_delta = u, delta

    if chain["hard"]:
        raise BracketViolation(f"bracket chain violated at {chain['hard']} node-rungs")
    u_field = Field(grid, prev, "u")
    v = prev + u0
    eta = conformal_exponent(model, conf, c, u_field)
    G = conf.newton_g
    log_q = log_one_plus_dist2(grid, conf)

    def tail_rhs(idx):
        lq = log_q[idx]

        def R(x):
            t = np.exp(x)
            # eta in terms of v: 8 pi G (2c - F + v) - 16 pi G sum m ln|x - p| on tail nodes
            expo = 8.0 * math.pi * G * (2.0 * c - model.F_of_v(x) + x - (lq + u0[idx]))
            return 2.0 * np.exp(expo) * model.U_of_v(x) / (model.sqrtG(t) * model.dilation(t))

        return R

    tail = far_field_tail(grid, v, u0, tail_rhs)
    checks = {
        "c": c,
        "c_verified": bool(c_verified),
        "subsolution_margin": subsolution_margin(model, grid, conf, c, ladder[0]),
        "chain_hard_violations": chain["hard"],
        "chain_soft_violations": chain["soft"],
        "monotone_violations": monotone,
        "rung_consistency": consistency,
        "admissibility": admissibility,
        "gravity_bound": conf.gravity_bound,
        "core_radius_estimate": eps_core,
        "min_node_distance": math.sqrt(d2_min),
        "ladder_extended": extended,
    }
    return StringSolution(u_field, Field(grid, v, "v"), eta, c, rungs, model, conf, tail, checks)
