"""Flat-space self-dual vortices.

With ``v = ln|phi|^2`` and ``u = v - u0`` the self-dual system reduces to

    Delta u = 2 U(e^{u+u0}) / (sqrt(G) W) + g_bg,

solved by monotone descent inside the bracket formed by two Abelian-Higgs
solutions. Writing ``U(e^v) = U'(xi) (e^v - 1)`` shows the nonlinearity lies
between ``lambda_2 (e^v - 1)`` and ``lambda_1 (e^v - 1)``, so the
Abelian-Higgs solution with ``lambda_1`` is a subsolution and the one with
``lambda_2`` a supersolution.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import BracketAssemblyFailure, BracketViolation, GridError, SolverError
from .geometry import Field, Grid, VortexConfiguration, background_g, background_u0, check_grid, laplacian
from .iterate import (
    MonotoneProblem,
    SolveReport,
    discretization_slack,
    monotone_solve,
    rim_data,
    solve_abelian_higgs,
)
from .model import ModelSpec

log = logging.getLogger(__name__)


@dataclass(eq=False)
class VortexSolution:
    u: Field
    v: Field
    model: ModelSpec
    conf: VortexConfiguration
    report: SolveReport
    sub: SolveReport | None = None
    sup: SolveReport | None = None
    v_tail: np.ndarray | None = None  # far-field v re-solved at full relative precision
    checks: dict = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.u.grid

    @property
    def v_accurate(self) -> np.ndarray:
        """``v`` with the far field replaced by its precision-preserving re-solve."""
        return self.v.values if self.v_tail is None else self.v_tail

    @property
    def eta(self):
        return None


def vortex_nonlinearity(model: ModelSpec, grid: Grid, conf: VortexConfiguration):
    inside = grid.interior
    u0 = background_u0(grid, conf).values[inside]
    g = background_g(grid, conf).values[inside]

    def f(u):
        return model.rhs_of_v(u + u0) + g

    return f


def far_field_tail(grid: Grid, v: np.ndarray, u0: np.ndarray, rhs_at, tol: float = 1e-13,
                   max_iter: int = 60) -> np.ndarray | None:
    """Re-solve ``Delta v = R(v)`` directly for ``v`` on the outer part of a radial grid.

    Far out ``v`` is exponentially small while ``u`` and ``-u0`` are only
    algebraically small, so ``v = u + u0`` loses all relative precision.
    The tail equation is solved with Dirichlet data ``v(r_a)`` (taken where
    ``v`` is still resolved relative to ``u0``) and ``v(r_max) = 0``.
    ``rhs_at(idx)`` returns the nonlinearity ``R(v)`` restricted to the
    nodes ``idx``. Returns the composite field, or ``None`` for cartesian grids.
    """
    if not grid.is_radial:
        return None
    r = grid.r
    ok = np.isfinite(v) & (np.abs(v) > 1e-6 * np.abs(u0)) & (r <= 0.5 * grid.r_max) & (r > 0)
    if not np.any(ok):
        return v.copy()
    ia = int(np.nonzero(ok)[0].max())
    if ia >= r.size - 3:
        return v.copy()
    lap = laplacian(grid)
    idx = np.arange(ia + 1, r.size - 1)
    A = lap.matrix.tocsr()[idx][:, idx].tocsc()
    lift = np.zeros(idx.size)
    lift[0] = lap._lower[ia + 1] * v[ia]

    R = rhs_at(idx)
    x = np.clip(v[idx], -np.inf, 0.0)
    x = np.where(np.isfinite(x), x, 0.0)
    for _ in range(max_iter):
        res = A @ x + lift - R(x)
        step = 1e-7 * np.maximum(np.abs(x), 1e-300)
        d = (R(x + step) - R(x - step)) / (2.0 * step)
        J = (A - sp.diags(d)).tocsc()
        dx = spla.spsolve(J, -res)
        x = x + dx
        if np.max(np.abs(dx)) <= tol * max(np.max(np.abs(x)), 1e-300):
            break
    out = v.copy()
    out[idx] = x
    out[-1] = 0.0
    return out


def solve_vortex(model: ModelSpec, grid: Grid, conf: VortexConfiguration, tol: float = 1e-10,
                 max_iter: int = 50_000, threads: int = 2) -> VortexSolution:
    """Solve the flat-space governing equation for the prescribed vortex points."""
    if conf.newton_g != 0.0:
        raise GridError("solve_vortex requires newton_g = 0; use solve_string for gravitating strings")
    check_grid(grid, conf)
    lam1, lam2 = model.bracket_lambdas()

    def ah(lam):
        return solve_abelian_higgs(grid, conf, lam, tol=tol, max_iter=max_iter)

    try:
        with ThreadPoolExecutor(max_workers=max(1, min(2, threads))) as pool:
            sub_future, sup_future = pool.submit(ah, lam1), pool.submit(ah, lam2)
            sub_rep, sup_rep = sub_future.result(), sup_future.result()
    except SolverError as exc:
        raise BracketAssemblyFailure(f"bracket solves failed: {exc}") from exc

    inside = grid.interior
    u0 = background_u0(grid, conf).values
    f = vortex_nonlinearity(model, grid, conf)
    u_sub, u_sup = sub_rep.solution.values, sup_rep.solution.values
    scale = np.abs(background_g(grid, conf).values) + np.abs(lam2)
    slack = np.maximum(discretization_slack(grid, scale), 20.0 * tol)
    problem = MonotoneProblem(grid, f, u_sub, u_sup, tol=tol, max_iter=max_iter, slack=slack,
                              name="u", boundary=rim_data(grid, conf))
    report = monotone_solve(problem)
    u = report.solution.values

    # ordering u_lam1 <= u <= u_lam2 <= -u0, counted with and without slack
    hard = int(np.count_nonzero(u < u_sub - slack) + np.count_nonzero(u > u_sup + slack))
    with np.errstate(invalid="ignore"):
        over = np.count_nonzero((u_sup > -u0 + slack) & np.isfinite(u0))
    soft = int(np.count_nonzero(u < u_sub) + np.count_nonzero(u > u_sup))
    if hard or over:
        raise BracketViolation(f"solution leaves the bracket at {hard} nodes ({over} above -u0)")
    v = u + u0
    checks = {
        "bracket_hard_violations": hard,
        "bracket_soft_violations": soft,
        "bracket_above_minus_u0": int(over),
        "slack_max": float(np.max(slack)),
        "sub_residual_min": report.residual_sub,
        "super_residual_max": report.residual_super,
        "lambda_bracket": [lam1, lam2],
        "v_negative_interior": bool(np.all(v[inside] < 0)),
    }
    tail = far_field_tail(grid, v, u0, lambda idx: model.rhs_of_v)
    if tail is not None:
        checks["v_negative_interior"] = bool(np.all(tail[inside] < 0))
    return VortexSolution(Field(grid, u, "u"), Field(grid, v, "v"), model, conf, report, sub_rep, sup_rep,
                          tail, checks)
