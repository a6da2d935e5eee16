"""Physical fields and quantized observables reconstructed from a solution ``v``.

The magnetic field is taken from the algebraic self-dual relation
``F12 = -e^eta U / (sqrt(G) W)``; the differenced ``-1/2 Delta v`` is kept
as an independent cross-check. In the self-dual gauge
``D_1 phi / phi = (d1 v - i d2 v) / 2`` and ``D_2 phi = i D_1 phi``, so

    |D_1 phi|^2 + |D_2 phi|^2 = e^v |grad v|^2 / 2,
    J_12 = div(g(e^v) e^v grad v) = w e^v |grad v|^2 / 2 + g e^v Delta v,
    H    = e^{-eta} w e^v |grad v|^2 / 2 + U^2 / W.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import FitDegenerate
from .geometry import (Field, Grid, VortexConfiguration, background_g, gradient, grad_u0,
                       independent_laplacian, integrate, laplacian)
from .model import ModelSpec

ANNULUS = (0.5, 0.75)
# pointwise identities are checked off a fixed disk around each vortex: at a conical
# point second differences keep an O(1) error a fixed number of cells away
CORE_RADIUS = 0.05


@dataclass(eq=False)
class ReconstructedFields:
    grid: Grid
    phi_sq: Field
    F12: Field
    F12_diff: Field  # -1/2 (Delta u - g_bg) with an independent stencil; NaN on the outer boundary
    energy_density: Field
    D_phi_sq: Field
    J12: Field
    eta: Field | None = None
    core_mask: np.ndarray | None = None  # nodes within CORE_RADIUS or two cells of a vortex
    adjacent_mask: np.ndarray | None = None  # nodes within two cells of a vortex


@dataclass
class DecayReport:
    kind: str
    rate: float
    expected: float
    annulus: tuple
    residual: float
    relative_error: float
    n_points: int

    def as_dict(self) -> dict:
        return asdict(self)


def _solution_parts(solution):
    grid = solution.u.grid
    eta = getattr(solution, "eta", None)
    return grid, solution.u.values, solution.v.values, eta


def vortex_nodes(grid: Grid, conf: VortexConfiguration):
    """Yield (node mask, multiplicity) for vortex points that sit exactly on nodes."""
    for p, m in conf.terms():
        hit = grid.dist2(p) == 0.0
        if np.any(hit):
            yield hit, m


def core_mask(grid: Grid, conf: VortexConfiguration, cells: float = 2.0, radius: float = 0.0) -> np.ndarray:
    """Nodes within ``max(cells * h_local, radius)`` of some vortex."""
    mask = np.zeros(grid.shape, dtype=bool)
    reach = np.maximum(cells * grid.h_local, radius) ** 2
    for p, _ in conf.terms():
        mask |= grid.dist2(p) <= reach
    return mask


def expv_grad_sq(grid: Grid, conf: VortexConfiguration, u: np.ndarray) -> np.ndarray:
    """``e^v |grad v|^2`` with ``v = u + u0``, finite at vortex nodes.

    Off vortex nodes this is ``e^{u+u0} |grad u + grad u0|^2``; at a vortex
    of multiplicity one the limit is ``4 e^{u} prod_{others} e^{u0_t}``, and
    zero for higher multiplicity.
    """
    du1, du2 = gradient(grid, u)
    g1, g2 = grad_u0(grid, conf)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        log_p = np.zeros(grid.shape)
        for p, m in conf.terms():
            log_p += m * np.log1p(-1.0 / (1.0 + grid.dist2(p)))
        out = np.exp(u + log_p) * ((du1 + g1) ** 2 + (du2 + g2) ** 2)
    for hit, m in vortex_nodes(grid, conf):
        if m == 1:
            others = np.zeros(grid.shape)
            for q, mq in conf.terms():
                d2 = grid.dist2(q)
                with np.errstate(divide="ignore"):
                    others += np.where(d2 > 0, mq * np.log1p(-1.0 / (1.0 + d2)), 0.0)
            out[hit] = 4.0 * np.exp(u[hit] + others[hit])
        else:
            out[hit] = 0.0
    return out


def _radial_regular_gradient(grid: Grid, conf: VortexConfiguration, u: np.ndarray) -> np.ndarray:
    """``e^{v/2} v'`` on a radial grid in the regular form (no 0 * inf at the axis)."""
    m = conf.N
    r = grid.r
    du, _ = gradient(grid, u)
    return np.exp(0.5 * u) * r ** (m - 1) * (du * r + 2.0 * m / (1.0 + r ** 2)) / (1.0 + r ** 2) ** (0.5 * m)


def reconstruct(model: ModelSpec, solution, sign: int = 1) -> ReconstructedFields:
    """Assemble |phi|^2, F12, H, |D phi|^2 and J12 from a converged solution.

    ``sign = -1`` selects the anti-self-dual branch by negating F12.
    """
    grid, u, v, eta = _solution_parts(solution)
    conf = solution.conf
    t = np.exp(v)
    e_eta = np.ones(grid.shape) if eta is None else np.exp(eta.values)
    Uv = model.U_of_v(v)
    W = model.dilation(t)
    F12 = -sign * e_eta * Uv / (model.sqrtG(t) * W)

    g_bg = background_g(grid, conf).values
    F12_diff = -0.5 * (independent_laplacian(grid, u) - g_bg)
    F12_diff = np.where(grid.interior, sign * F12_diff, np.nan)

    if grid.is_radial:
        grad_sq = _radial_regular_gradient(grid, conf, u) ** 2
    else:
        grad_sq = expv_grad_sq(grid, conf, u)
    w = model.w_derived(t)
    kinetic = 0.5 * w * grad_sq
    H = kinetic / e_eta + Uv ** 2 / W
    # J12 = w e^v |grad v|^2 / 2 + g e^v Delta v with Delta v = -2 F12 (differenced)
    tg = model.core_current * np.ones(grid.shape)
    pos = t > 0
    tg[pos] = t[pos] * model.g_derived(t[pos])
    J12 = kinetic - 2.0 * sign * tg * np.where(grid.interior, F12_diff * sign, F12 * sign)
    return ReconstructedFields(
        grid,
        Field(grid, t, "phi_sq"),
        Field(grid, F12, "F12"),
        Field(grid, F12_diff, "F12_diff"),
        Field(grid, H, "H"),
        Field(grid, 0.5 * grad_sq, "D_phi_sq"),
        Field(grid, J12, "J12"),
        eta,
        core_mask(grid, conf, radius=CORE_RADIUS),
        core_mask(grid, conf),
    )


def flux(fields: ReconstructedFields, conf: VortexConfiguration) -> dict:
    """Direct quadrature of F12 next to the identity value (1/2) int g_bg."""
    grid = fields.grid
    direct = integrate(fields.F12.values, grid)
    identity = 0.5 * integrate(background_g(grid, conf).values, grid)
    return {"flux": direct, "flux_identity": identity, "flux_identity_gap": direct - identity,
            "flux_expected": 2.0 * math.pi * conf.N}


def energy(fields: ReconstructedFields, metric: str = "flat") -> float:
    """int H (flat) or int H e^eta (conformal metric of a string)."""
    H = fields.energy_density.values
    if metric == "flat":
        return integrate(H, fields.grid)
    if metric == "conformal":
        if fields.eta is None:
            raise ValueError("conformal energy needs eta")
        return integrate(H * np.exp(fields.eta.values), fields.grid)
    raise ValueError(f"unknown metric {metric!r}")


def energy_topological(fields: ReconstructedFields) -> dict:
    """int F12 and the pointwise quadrature of J12, with their sum."""
    grid = fields.grid
    J = np.where(grid.interior, fields.J12.values, 0.0)
    f12 = integrate(fields.F12.values, grid)
    j12 = integrate(J, grid)
    return {"flux": f12, "J12_integral": j12, "energy_topological": f12 + j12}


def current_integral(model: ModelSpec, grid: Grid, v: np.ndarray) -> float:
    """Outer-boundary circulation of ``J = g e^v (-d2 v, d1 v)``, i.e. the line integral of g e^v dv/dn."""
    t = np.exp(v)
    q = t * model.g_derived(np.where(t > 0, t, 1.0))
    if grid.is_radial:
        dv, _ = gradient(grid, v)
        return float(2.0 * math.pi * grid.r[-1] * q[-1] * dv[-1])
    d1, d2 = gradient(grid, np.where(np.isfinite(v), v, 0.0))
    h = grid.h
    # outward normal derivatives on the four sides, trapezoid along each side
    sides = [q[-1, :] * d1[-1, :], -q[0, :] * d1[0, :], q[:, -1] * d2[:, -1], -q[:, 0] * d2[:, 0]]
    total = 0.0
    for s in sides:
        total += h * (np.sum(s) - 0.5 * (s[0] + s[-1]))
    return float(total)


def annulus_mask(grid: Grid, annulus=ANNULUS) -> np.ndarray:
    r = grid.r
    lo, hi = annulus[0] * grid.extent, annulus[1] * grid.extent
    return (r >= lo) & (r <= hi)


def decay_fit(v: np.ndarray, grid: Grid, kind: str = "exponential", expected: float | None = None,
              annulus=ANNULUS) -> DecayReport:
    """Least-squares slope of ln|v| against r (exponential) or ln r (power) on an annulus."""
    sel = annulus_mask(grid, annulus)
    r = grid.r[sel]
    av = np.abs(np.asarray(v)[sel])
    if r.size < 3:
        raise FitDegenerate("fewer than three nodes on the fit annulus")
    bad = ~np.isfinite(av) | (av < 1e-300)
    if np.any(bad):
        raise FitDegenerate("|v| underflows on the fit annulus", underflow_radius=float(np.min(r[bad])))
    x = r if kind == "exponential" else np.log(r)
    if kind not in ("exponential", "power"):
        raise ValueError(f"unknown decay kind {kind!r}")
    coef, res, *_ = np.polyfit(x, np.log(av), 1, full=True)
    rate = -float(coef[0])
    resid = float(math.sqrt(res[0] / r.size)) if res.size else 0.0
    exp_val = float("nan") if expected is None else float(expected)
    rel = abs(rate - exp_val) / abs(exp_val) if expected else float("nan")
    return DecayReport(kind, rate, exp_val, tuple(a * grid.extent for a in annulus), resid, rel, int(r.size))


def eta_fit(eta: np.ndarray, grid: Grid, conf: VortexConfiguration, annulus=ANNULUS) -> dict:
    """Slope of eta against ln|x| on the outer annulus, against -16 pi G N."""
    sel = annulus_mask(grid, annulus)
    lr = np.log(grid.r[sel])
    coef = np.polyfit(lr, np.asarray(eta)[sel], 1)
    expected = -16.0 * math.pi * conf.newton_g * conf.N
    slope = float(coef[0])
    rel = abs(slope - expected) / abs(expected) if expected else abs(slope)
    return {"slope": slope, "expected": expected, "relative_error": rel}


def bps_residuals(model: ModelSpec, fields: ReconstructedFields) -> dict:
    """(i) sup |F12_diff - F12| / max |F12| off the vortex cores;
    (ii) int |H - e^{-eta}(F12 + J12)| / int H with the differenced J12.

    ``bps_residual_adjacent`` repeats (i) excluding only vortex-adjacent nodes.
    """
    grid = fields.grid
    F = fields.F12.values
    diff = np.abs(fields.F12_diff.values - F)

    def sup(mask):
        keep = grid.interior & ~mask
        return float(np.max(diff[keep])) / float(np.max(np.abs(F[keep])))

    keep = grid.interior & ~fields.core_mask
    e_eta = np.ones(grid.shape) if fields.eta is None else np.exp(fields.eta.values)
    gap = np.where(keep, np.abs(fields.energy_density.values - (F + fields.J12.values) / e_eta), 0.0)
    H = np.where(keep, fields.energy_density.values, 0.0)
    return {"bps_residual": sup(fields.core_mask), "bps_residual_adjacent": sup(fields.adjacent_mask),
            "energy_identity_residual": integrate(gap, grid) / integrate(H, grid)}


def stress_residuals(model: ModelSpec, fields: ReconstructedFields) -> dict:
    """Spatial stresses in the self-dual gauge: sup of the mixed components over max H.

    ``e^{-eta} T11 = b^2 (W - 1/F) + e^{-eta} w (|D1 phi|^2 - |D2 phi|^2)`` with
    ``F = sqrt(1 + G e^{-2 eta} F12^2 / b^2)`` built from the differenced
    F12; ``T22`` flips the sign of the kinetic difference. The self-dual
    gauge gives ``|D1 phi| = |D2 phi|`` and a vanishing ``T12``, so the
    check measures how far the discrete field strength is from saturating
    the Born-Infeld square root.
    """
    grid = fields.grid
    t = fields.phi_sq.values
    e_eta = np.ones(grid.shape) if fields.eta is None else np.exp(fields.eta.values)
    F12d = np.where(grid.interior, fields.F12_diff.values, 0.0)
    b = model.b
    Fbi = np.sqrt(1.0 + model.G(t) * F12d ** 2 / (e_eta ** 2 * b ** 2))
    W = model.dilation(t)
    # D1 phi / phi = (d1 v - i d2 v) / 2 and D2 phi = i D1 phi, so the kinetic difference vanishes
    kin_diff = np.zeros(grid.shape)
    w = model.w_derived(t)
    T11 = b ** 2 * (W - 1.0 / Fbi) + w * kin_diff / e_eta
    T22 = b ** 2 * (W - 1.0 / Fbi) - w * kin_diff / e_eta
    T12 = np.zeros(grid.shape)
    scale = float(np.max(fields.energy_density.values))

    def sup(mask):
        keep = grid.interior & ~mask
        return max(float(np.max(np.abs(T[keep]))) for T in (T11, T22, T12)) / scale

    return {"stress_residual": sup(fields.core_mask), "stress_residual_adjacent": sup(fields.adjacent_mask),
            "T12_sup": float(np.max(np.abs(T12)))}


def curvature(fields: ReconstructedFields, newton_g: float) -> dict:
    """Total curvature as -1/2 int Delta_h eta and the smooth part 8 pi G int H e^eta.

    The discrete sum telescopes to the outer boundary flux of eta, so it
    includes the conical contributions of the vortex points.
    """
    if fields.eta is None:
        raise ValueError("curvature needs eta")
    grid = fields.grid
    lap = laplacian(grid)
    lap_eta = np.where(grid.interior, lap.apply(fields.eta.values), 0.0)
    total = -0.5 * integrate(lap_eta, grid)
    smooth = 8.0 * math.pi * newton_g * energy(fields, "conformal")
    return {"curvature_total": total, "curvature_smooth": smooth}


def gauss_curvature(fields: ReconstructedFields) -> np.ndarray:
    """Pointwise K_g = -1/2 e^{-eta} Delta_h eta (NaN on the rim)."""
    lap = laplacian(fields.grid)
    K = -0.5 * np.exp(-fields.eta.values) * lap.apply(fields.eta.values)
    return np.where(fields.grid.interior, K, np.nan)


def richardson_order(q_h: float, q_h2: float, q_h4: float) -> float:
    """Observed order from three grids with spacing h, h/2, h/4."""
    num, den = abs(q_h - q_h2), abs(q_h2 - q_h4)
    if den == 0.0 or num == 0.0:
        return float("nan")
    return math.log2(num / den)


def summarize(model: ModelSpec, solution, decay_kind: str = "exponential") -> dict:
    """Every observable of a solution in one JSON-ready dictionary."""
    fields = reconstruct(model, solution)
    grid, conf = fields.grid, solution.conf
    out: dict = {}
    out.update(flux(fields, conf))
    metric = "flat" if fields.eta is None else "conformal"
    out["energy_direct"] = energy(fields, metric)
    out.update(energy_topological(fields))
    out["current_integral"] = current_integral(model, grid, solution.v_accurate)
    try:
        decay = decay_fit(solution.v_accurate, grid, decay_kind,
                          math.sqrt(model.M_decay) if decay_kind == "exponential" else None)
        out["decay"] = decay.as_dict()
    except FitDegenerate as exc:
        out["decay"] = {"kind": decay_kind, "degenerate": str(exc), "underflow_radius": exc.underflow_radius}
    out.update(bps_residuals(model, fields))
    if fields.eta is not None:
        out.update(curvature(fields, conf.newton_g))
        out.update(stress_residuals(model, fields))
        out["eta_fit"] = eta_fit(fields.eta.values, grid, conf)
    return out
