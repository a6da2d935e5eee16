"""Monotone iteration for semilinear problems ``Delta u = f(u, x)``.

Starting from a supersolution, the scheme

    (Delta - K) u_{k+1} = f(u_k) - K u_k

produces a pointwise non-increasing sequence that stays above any
subsolution, provided ``K >= df/du`` on the bracket (the discrete
``K - Delta`` is an M-matrix). Started from a subsolution instead, the same
scheme produces a non-decreasing sequence. ``K`` may vary from node to node
on radial grids; on cartesian grids its maximum is used.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import BracketAssemblyFailure, BracketViolation, MaxIterations
from .geometry import Field, Grid, VortexConfiguration, background_g, background_u0, laplacian

log = logging.getLogger(__name__)

Nonlinearity = Callable[[np.ndarray], np.ndarray]

K_SAMPLES = 64
K_STEP = 1e-6
K_FACTOR = 1.25


@dataclass
class MonotoneProblem:
    grid: Grid
    f: Nonlinearity  # acts on interior values, returns interior values
    u_sub: np.ndarray  # full fields (boundary entries are the Dirichlet data)
    u_super: np.ndarray
    tol: float = 1e-10
    max_iter: int = 50_000
    K: np.ndarray | float | None = None
    slack: np.ndarray | float | None = None
    check_admissible: bool = True
    name: str = "u"
    boundary: np.ndarray | None = None  # Dirichlet data on the rim; zero if omitted
    direction: str = "down"  # "down" starts from u_super, "up" from u_sub
    admissible_sides: tuple = ("sub", "super")  # which inequalities check_admissible verifies
    K_range: tuple | None = None  # (lo, hi) interior values for sampling K; the bracket by default


@dataclass
class SolveReport:
    solution: Field
    iterations: int
    residuals: list = field(default_factory=list)
    updates: list = field(default_factory=list)
    bracket_violations: int = 0
    monotone_violations: int = 0
    converged: bool = False
    K_max: float = 0.0
    residual_sub: float = 0.0
    residual_super: float = 0.0
    notes: dict = field(default_factory=dict)

    @property
    def final_residual(self) -> float:
        return self.residuals[-1] if self.residuals else float("nan")

    def trace(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "K_max": self.K_max,
            "bracket_violations": self.bracket_violations,
            "monotone_violations": self.monotone_violations,
            "admissibility": {"sub_min": self.residual_sub, "super_max": self.residual_super},
            "residual": [float(x) for x in self.residuals],
            "update": [float(x) for x in self.updates],
            **self.notes,
        }


def estimate_K(f: Nonlinearity, lo: np.ndarray, hi: np.ndarray, samples: int = K_SAMPLES,
               step: float = K_STEP, factor: float = K_FACTOR) -> np.ndarray:
    """Per-node bound ``factor * max df/du`` from a uniform u-sample of ``[lo, hi]``.

    Backward differences keep every evaluation at or below ``hi``.
    """
    best = np.zeros_like(lo)
    for s in np.linspace(0.0, 1.0, samples):
        u = lo + s * (hi - lo)
        d = (f(u) - f(u - step)) / step
        best = np.maximum(best, d)
    return factor * best


def discretization_slack(grid: Grid, scale) -> np.ndarray:
    """Allowance ``10 h^2 * scale`` for O(h^2) violations of discrete inequalities."""
    return 10.0 * grid.h_local ** 2 * np.abs(scale) + 1e-12


def roundoff_floor(lap, u: np.ndarray) -> np.ndarray:
    """Per-node smallest residual resolvable in double precision: 64 eps |diag_i| max|u|."""
    return 64.0 * np.finfo(float).eps * lap.diag_abs * max(1.0, float(np.max(np.abs(u))))


def _mono_slack(u):
    return 1e-12 * np.maximum(1.0, np.abs(u))


def monotone_solve(problem: MonotoneProblem) -> SolveReport:
    grid = problem.grid
    lap = laplacian(grid)
    inside = grid.interior
    sub = problem.u_sub[inside]
    sup = problem.u_super[inside]
    rim = ~inside
    boundary = np.zeros(grid.shape)
    if problem.boundary is not None:
        boundary[rim] = np.asarray(problem.boundary)[rim]
    tiny = 1e-14 * np.maximum(1.0, np.abs(boundary[rim]))
    if np.any(problem.u_sub[rim] > boundary[rim] + tiny) or np.any(problem.u_super[rim] < boundary[rim] - tiny):
        raise BracketViolation(f"{problem.name}: bracket does not enclose the boundary data")
    # contribution of the rim values to the interior rows of the stencil
    lift = lap.apply(boundary)[inside]
    slack_full = np.broadcast_to(
        np.asarray(problem.slack if problem.slack is not None else 1e-12, dtype=float), grid.shape
    )
    slack = slack_full[inside]
    if np.any(sub > sup + slack + 1e-14 * np.maximum(1.0, np.abs(sup))):
        raise BracketViolation(f"{problem.name}: subsolution exceeds supersolution")

    res_sub = lap.apply(np.where(inside, problem.u_sub, boundary))[inside] - problem.f(sub)
    # an infinite supersolution (a pointwise bound only) gives non-finite residuals
    with np.errstate(invalid="ignore", over="ignore"):
        res_sup = lap.apply(np.where(inside, problem.u_super, boundary))[inside] - problem.f(sup)
    if problem.check_admissible:
        sides = problem.admissible_sides
        # residuals below the round-off floor of the stencil carry no sign information
        with np.errstate(invalid="ignore"):
            tol_sub = slack + roundoff_floor(lap, sub)
            tol_sup = slack + roundoff_floor(lap, np.where(np.isfinite(sup), sup, 0.0))
        bad_sub = np.count_nonzero(res_sub < -tol_sub) if "sub" in sides else 0
        bad_sup = np.count_nonzero(res_sup > tol_sup) if "super" in sides else 0
        if bad_sub or bad_sup:
            raise BracketViolation(
                f"{problem.name}: bracket not admissible ({bad_sub} sub / {bad_sup} super nodes, "
                f"min sub residual {res_sub.min():.3e}, max super residual {res_sup.max():.3e})"
            )

    if problem.direction not in ("down", "up"):
        raise ValueError(f"direction must be 'down' or 'up', got {problem.direction!r}")
    descending = problem.direction == "down"
    if problem.K is not None:
        K = problem.K
    elif problem.K_range is not None:
        K = estimate_K(problem.f, *problem.K_range)
    else:
        K = estimate_K(problem.f, sub, sup)
    K = np.broadcast_to(np.asarray(K, dtype=float), sub.shape).copy()
    if not grid.is_radial:
        K = np.full_like(K, K.max())
    solve = lap.shifted_solver(K)

    start = sup if descending else sub
    full = boundary.copy()
    full[inside] = start
    report = SolveReport(Field(grid, full.copy(), problem.name), 0, K_max=float(K.max()), residual_sub=float(res_sub.min()),
                         residual_super=float(np.max(res_sup)))
    report.notes["direction"] = problem.direction
    u = start.copy()
    for k in range(1, problem.max_iter + 1):
        fu = problem.f(u)
        new = solve(fu - K * u - lift)
        update = float(np.max(np.abs(new - u)))
        if descending:
            report.monotone_violations += int(np.count_nonzero(new > u + _mono_slack(u)))
        else:
            report.monotone_violations += int(np.count_nonzero(new < u - _mono_slack(u)))
        below = np.count_nonzero(new < sub - slack)
        with np.errstate(invalid="ignore"):
            above = np.count_nonzero(new > sup + slack)
        if below or above:
            report.bracket_violations += int(below + above)
            raise BracketViolation(f"{problem.name}: iterate {k} left the bracket at {below + above} nodes")
        u = new
        full[inside] = u
        res = np.abs(lap.apply(full)[inside] - problem.f(u))
        residual = float(np.max(res))
        report.updates.append(update)
        report.residuals.append(residual)
        if update < problem.tol and np.all(res < np.maximum(10.0 * problem.tol, roundoff_floor(lap, u))):
            report.converged = True
            break
        if update == 0.0:
            break  # exact fixed point in floating point; no further progress is possible
    report.iterations = k
    report.notes["residual_target"] = float(np.max(np.maximum(10.0 * problem.tol, roundoff_floor(lap, u))))
    report.solution = Field(grid, full.copy(), problem.name)
    if not report.converged:
        raise MaxIterations(
            f"{problem.name}: no convergence after {k} iterations "
            f"(update {report.updates[-1]:.3e}, residual {report.residuals[-1]:.3e})"
        )
    log.debug("%s converged in %d iterations", problem.name, k)
    return report


def damped_newton(grid: Grid, f: Nonlinearity, dfdu: Nonlinearity, u_init: np.ndarray,
                  tol: float = 1e-12, max_iter: int = 100, boundary: np.ndarray | None = None) -> np.ndarray:
    """Damped Newton for ``Delta u = f(u)``; the rim of ``boundary`` (default 0) is the Dirichlet data."""
    lap = laplacian(grid)
    inside = grid.interior
    rim_values = np.zeros(grid.shape) if boundary is None else np.where(inside, 0.0, boundary)
    full = np.where(inside, u_init, rim_values)

    def residual(values):
        tmp = rim_values.copy()
        tmp[inside] = values
        return lap.apply(tmp)[inside] - f(values)

    u = full[inside].copy()
    r = residual(u)
    norm = float(np.max(np.abs(r)))
    for _ in range(max_iter):
        if norm < tol:
            break
        du = _newton_step(lap, dfdu(u), -r)
        step = 1.0
        while step > 1e-6:
            trial = u + step * du
            r_trial = residual(trial)
            n_trial = float(np.max(np.abs(r_trial)))
            if np.isfinite(n_trial) and n_trial < (1.0 - 1e-4 * step) * norm:
                break
            step *= 0.5
        u, r, norm = trial, r_trial, n_trial
    out = rim_values.copy()
    out[inside] = u
    return out


def _newton_step(lap, d: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``(Delta - diag d) x = rhs``: banded LU on radial grids, preconditioned CG otherwise."""
    J = (lap.matrix - sp.diags(d)).tocsc()
    if lap.grid.is_radial:
        return spla.spsolve(J, rhs)
    # -J is SPD; the constant-shift sine-transform solve is a spectrally equivalent preconditioner
    pre = lap.shifted_solver(float(np.mean(d)))
    n = rhs.size
    M = spla.LinearOperator((n, n), matvec=lambda x: -pre(x))
    x, info = spla.cg(-J, -rhs, M=M, rtol=1e-13, atol=0.0, maxiter=500)
    if info != 0:
        raise RuntimeError(f"CG did not converge in the Newton step (info={info})")
    return x


def rim_data(grid: Grid, conf: VortexConfiguration, delta: float = 0.0) -> np.ndarray:
    """Boundary data ``u = -u_{0,delta}`` (that is, ``v = 0``) on the rim, zero inside."""
    u0 = background_u0(grid, conf, delta).values
    return np.where(grid.interior, 0.0, -u0)


def abelian_higgs_problem(grid: Grid, conf: VortexConfiguration, lam: float):
    """Nonlinearity and derivative of ``Delta u = lam (e^{u + u0} - 1) + g``."""
    inside = grid.interior
    u0 = background_u0(grid, conf).values[inside]
    g = background_g(grid, conf).values[inside]

    def f(u):
        return lam * np.expm1(u + u0) + g

    def dfdu(u):
        return lam * np.exp(u + u0)

    return f, dfdu


def solve_abelian_higgs(grid: Grid, conf: VortexConfiguration, lam: float, tol: float = 1e-10,
                        max_iter: int = 50_000) -> SolveReport:
    """Solve the Abelian-Higgs family member with parameter ``lam``.

    A damped-Newton presolve gives ``u_N``; the bracket
    ``u_N -/+ eps * phi`` with ``-Delta phi = 1`` is then a genuine discrete
    sub/supersolution pair once ``eps`` exceeds the presolve residual, and
    monotone descent runs inside it.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    f, dfdu = abelian_higgs_problem(grid, conf, lam)
    inside = grid.interior
    rim = rim_data(grid, conf)
    try:
        uN = damped_newton(grid, f, dfdu, rim, tol=min(tol, 1e-12) * 1e-1, boundary=rim)
    except Exception as exc:  # noqa: BLE001 - any linear-algebra failure means no bracket
        raise BracketAssemblyFailure(f"Newton presolve failed for lambda={lam}: {exc}") from exc
    lap = laplacian(grid)
    rN = lap.apply(uN)[inside] - f(uN[inside])
    if not np.all(np.isfinite(rN)):
        raise BracketAssemblyFailure(f"Newton presolve diverged for lambda={lam}")
    phi = np.zeros(grid.shape)
    phi[inside] = lap.shifted_solver(0.0)(-np.ones(inside.sum()))
    eps = 10.0 * float(np.max(np.abs(rN))) + 1e-14
    problem = MonotoneProblem(grid, f, uN - eps * phi, uN + eps * phi, tol=tol, max_iter=max_iter,
                              name=f"u_lambda={lam:g}", boundary=rim)
    report = monotone_solve(problem)
    report.notes["presolve_residual"] = float(np.max(np.abs(rN)))
    report.notes["bracket_eps"] = eps
    return report
