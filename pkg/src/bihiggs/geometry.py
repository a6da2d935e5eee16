"""Grids, quadrature, discrete Laplacians and the singular background functions.

Two grid families are supported:

* ``radial``: nodes ``0 = r_0 < ... < r_{n-1} = r_max`` on a sinh-stretched
  mapping (nearly uniform at the axis, geometric towards the rim). All
  vortices must then sit at the origin. The Laplacian is the finite-volume
  discretisation of ``u'' + u'/r`` with the regularity condition ``u'(0) = 0``;
  quadrature uses the same control volumes, so the discrete Laplacian is
  symmetric under the quadrature inner product and sums telescope exactly.
* ``cartesian``: the uniform ``n x n`` square ``[-L, L]^2`` with the 5-point
  stencil and trapezoidal weights.

The operators act on interior nodes; outer-boundary values enter as Dirichlet data.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.fft
import scipy.integrate
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .errors import GridError, NonFinite


@dataclass(frozen=True, eq=False)
class Grid:
    kind: str
    r_max: float = 0.0
    n_r: int = 0
    stretch: float = 0.0
    half_width: float = 0.0
    n: int = 0

    @classmethod
    def radial(cls, r_max: float, n_r: int, stretch: float = 4.0) -> "Grid":
        if not r_max > 0 or n_r < 4:
            raise GridError(f"radial grid needs r_max > 0 and n_r >= 4, got {r_max}, {n_r}")
        if stretch < 0:
            raise GridError("stretch must be non-negative")
        return cls("radial", r_max=float(r_max), n_r=int(n_r), stretch=float(stretch))

    @classmethod
    def radial_graded(cls, r_max: float, n_r: int, r_first: float) -> "Grid":
        """Radial grid whose sinh stretch puts the first node off the origin at ``r_first``."""
        if not 0.0 < r_first < r_max / (n_r - 1):
            raise GridError(f"r_first must lie in (0, r_max / (n_r - 1)), got {r_first}")
        ds = 1.0 / (n_r - 1)

        def gap(s):  # log of r_1(s) / r_first, decreasing in s
            return math.log(r_max) + math.log(math.sinh(s * ds)) - (s + math.log1p(-math.exp(-2.0 * s)) - math.log(2.0)) - math.log(r_first)

        hi = 1.0
        while gap(hi) > 0.0:
            hi *= 2.0
        return cls.radial(r_max, n_r, brentq(gap, 1e-9, hi, xtol=1e-12))

    @classmethod
    def cartesian(cls, half_width: float, n: int) -> "Grid":
        if not half_width > 0 or n < 4:
            raise GridError(f"cartesian grid needs L > 0 and n >= 4, got {half_width}, {n}")
        return cls("cartesian", half_width=float(half_width), n=int(n))

    def describe(self) -> dict:
        if self.kind == "radial":
            return {"kind": "radial", "r_max": self.r_max, "n_r": self.n_r, "stretch": self.stretch}
        return {"kind": "cartesian", "half_width": self.half_width, "n": self.n}

    @property
    def is_radial(self) -> bool:
        return self.kind == "radial"

    @property
    def extent(self) -> float:
        """Radius of the largest centred disk contained in the domain."""
        return self.r_max if self.is_radial else self.half_width

    @cached_property
    def r(self) -> np.ndarray:
        """Radial nodes (radial grids) or node radii |x| (cartesian grids)."""
        if self.is_radial:
            s = np.linspace(0.0, 1.0, self.n_r)
            if self.stretch == 0.0:
                r = self.r_max * s
            else:
                r = self.r_max * np.sinh(self.stretch * s) / math.sinh(self.stretch)
            r[-1] = self.r_max
            return r
        x1, x2 = self.coords
        return np.hypot(x1, x2)

    @cached_property
    def axis(self) -> np.ndarray:
        """1D node coordinates of a cartesian grid."""
        if self.is_radial:
            raise GridError("axis is only defined for cartesian grids")
        return np.linspace(-self.half_width, self.half_width, self.n)

    @property
    def h(self) -> float:
        if self.is_radial:
            return float(np.max(np.diff(self.r)))
        return 2.0 * self.half_width / (self.n - 1)

    @cached_property
    def h_local(self) -> np.ndarray:
        """Local mesh width at every node."""
        if not self.is_radial:
            return np.full(self.shape, self.h)
        d = np.diff(self.r)
        out = np.empty(self.n_r)
        out[0] = d[0]
        out[-1] = d[-1]
        out[1:-1] = np.maximum(d[:-1], d[1:])
        return out

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        if self.is_radial:
            return self.r, np.zeros_like(self.r)
        x = self.axis
        return np.meshgrid(x, x, indexing="ij")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_r,) if self.is_radial else (self.n, self.n)

    @cached_property
    def interior(self) -> np.ndarray:
        """Boolean mask of unknown nodes (everything but the outer boundary)."""
        mask = np.ones(self.shape, dtype=bool)
        if self.is_radial:
            mask[-1] = False
        else:
            mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = False
        return mask

    @cached_property
    def volumes(self) -> np.ndarray:
        """Control volumes (radial: per unit angle) or trapezoid cell areas."""
        if self.is_radial:
            r = self.r
            mid = 0.5 * (r[1:] + r[:-1])
            edges = np.concatenate(([0.0], mid, [r[-1]]))
            return 0.5 * (edges[1:] ** 2 - edges[:-1] ** 2)
        w1 = np.full(self.n, self.h)
        w1[0] = w1[-1] = 0.5 * self.h
        return np.outer(w1, w1)

    @property
    def weights(self) -> np.ndarray:
        """Quadrature weights; the radial ones include the 2*pi*r Jacobian."""
        if self.is_radial:
            return 2.0 * np.pi * self.volumes
        return self.volumes

    def dist2(self, p: Sequence[float]) -> np.ndarray:
        x1, x2 = self.coords
        return (x1 - p[0]) ** 2 + (x2 - p[1]) ** 2


@dataclass(frozen=True)
class VortexConfiguration:
    """Vortex points with multiplicities plus the gravitational data."""

    points: tuple[tuple[float, float], ...]
    multiplicities: tuple[int, ...]
    newton_g: float = 0.0
    c: float | str = "auto"

    @classmethod
    def build(cls, points, multiplicities=None, newton_g: float = 0.0, c="auto") -> "VortexConfiguration":
        pts = [tuple(float(a) for a in p) for p in points]
        mult = [1] * len(pts) if multiplicities is None else [int(m) for m in multiplicities]
        if len(mult) != len(pts):
            raise GridError("points and multiplicities differ in length")
        if not pts:
            raise GridError("at least one vortex point is required")
        if any(len(p) != 2 for p in pts):
            raise GridError("vortex points must be (x1, x2) pairs")
        if any(m < 1 for m in mult):
            raise GridError("multiplicities must be positive integers")
        if newton_g < 0:
            raise GridError("newton_g must be non-negative")
        merged: dict[tuple[float, float], int] = {}
        for p, m in zip(pts, mult):
            merged[p] = merged.get(p, 0) + m
        if c != "auto":
            c = float(c)
        return cls(tuple(merged), tuple(merged.values()), float(newton_g), c)

    @property
    def N(self) -> int:
        return int(sum(self.multiplicities))

    @property
    def max_radius(self) -> float:
        return max(math.hypot(*p) for p in self.points)

    @property
    def gravity_bound(self) -> float:
        """The quantity 8*pi*G_N*N that must stay below one."""
        return 8.0 * math.pi * self.newton_g * self.N

    def translated(self, shift: Sequence[float]) -> "VortexConfiguration":
        pts = tuple((p[0] + shift[0], p[1] + shift[1]) for p in self.points)
        return VortexConfiguration(pts, self.multiplicities, self.newton_g, self.c)

    def terms(self):
        return zip(self.points, self.multiplicities)


@dataclass(eq=False)
class Field:
    grid: Grid
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise GridError(f"field {self.name!r} has shape {self.values.shape}, grid is {self.grid.shape}")

    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


def check_grid(grid: Grid, conf: VortexConfiguration) -> None:
    """Reject grids that are too small for the configuration or incompatible with it."""
    if grid.is_radial and conf.max_radius > 0.0:
        raise GridError("radial grids require every vortex at the origin")
    if not grid.extent > 4.0 * conf.max_radius:
        raise GridError(
            f"domain extent {grid.extent:g} must exceed 4x the largest |p_s| = {conf.max_radius:g}"
        )


def background_u0(grid: Grid, conf: VortexConfiguration, delta: float = 0.0) -> Field:
    """Regularised background sum_s m_s ln((delta + |x-p_s|^2) / (1 + |x-p_s|^2)).

    ``delta = 0`` gives the singular background, equal to ``-inf`` on nodes
    that coincide with a vortex.
    """
    if not 0.0 <= delta < 1.0:
        raise ValueError(f"delta must lie in [0, 1), got {delta}")
    out = np.zeros(grid.shape)
    with np.errstate(divide="ignore"):
        for p, m in conf.terms():
            d2 = grid.dist2(p)
            x = (delta - 1.0) / (1.0 + d2)
            # log1p keeps the far-field tail exact; near the core its argument approaches -1
            out += m * np.where(x > -0.5, np.log1p(x), np.log(delta + d2) - np.log1p(d2))
    return Field(grid, out, "u0" if delta == 0.0 else f"u0_delta={delta:g}")


def background_g(grid: Grid, conf: VortexConfiguration) -> Field:
    out = np.zeros(grid.shape)
    for p, m in conf.terms():
        out += m * 4.0 / (1.0 + grid.dist2(p)) ** 2
    return Field(grid, out, "g_bg")


def laplacian_u0_delta(grid: Grid, conf: VortexConfiguration, delta: float) -> np.ndarray:
    """Analytic Laplacian of the regularised background (delta > 0), or of u0 off the vortices."""
    out = np.zeros(grid.shape)
    for p, m in conf.terms():
        d2 = grid.dist2(p)
        with np.errstate(divide="ignore", invalid="ignore"):
            reg = 4.0 * delta / (delta + d2) ** 2 if delta > 0 else 0.0
        out += m * (reg - 4.0 / (1.0 + d2) ** 2)
    return out


def log_one_plus_dist2(grid: Grid, conf: VortexConfiguration) -> np.ndarray:
    """sum_s m_s ln(1 + |x - p_s|^2)."""
    out = np.zeros(grid.shape)
    for p, m in conf.terms():
        out += m * np.log1p(grid.dist2(p))
    return out


def grad_u0(grid: Grid, conf: VortexConfiguration) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of u0 (radial grids return (d/dr, 0)); infinite at vortex nodes."""
    x1, x2 = grid.coords
    g1 = np.zeros(grid.shape)
    g2 = np.zeros(grid.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        for p, m in conf.terms():
            d2 = grid.dist2(p)
            fac = 2.0 * m / (d2 * (1.0 + d2))
            g1 += fac * (x1 - p[0])
            g2 += fac * (x2 - p[1])
    return g1, g2


def gradient(grid: Grid, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Second-order finite-difference gradient; radial grids return (u'(r), 0) with u'(0) = 0."""
    if grid.is_radial:
        d = np.gradient(values, grid.r, edge_order=2)
        d[0] = 0.0
        return d, np.zeros_like(d)
    g1, g2 = np.gradient(values, grid.axis, grid.axis, edge_order=2)
    return g1, g2


def independent_laplacian(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Laplacian from repeated second-order gradients, independent of the solver stencil.

    Radial grids use ``(r u')' / r`` with ``2 u''`` on the axis. Used only
    for cross-checks; boundary rows are one-sided.
    """
    if grid.is_radial:
        r = grid.r
        d, _ = gradient(grid, values)
        flux_r = np.gradient(r * d, r, edge_order=2)
        out = np.empty_like(d)
        out[1:] = flux_r[1:] / r[1:]
        out[0] = 2.0 * np.gradient(d, r, edge_order=2)[0]
        return out
    x = grid.axis
    d1, d2 = np.gradient(values, x, x, edge_order=2)
    return np.gradient(d1, x, axis=0, edge_order=2) + np.gradient(d2, x, axis=1, edge_order=2)


class DiscreteLaplacian:
    """Discrete Laplacian with homogeneous Dirichlet data on the outer boundary.

    ``matrix`` acts on the interior unknowns (in ``grid.interior`` order);
    ``apply`` evaluates the stencil on a full field, honouring whatever
    boundary values it carries, and returns zeros on the boundary.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        if grid.is_radial:
            self._build_radial()
        else:
            self._build_cartesian()

    def _build_radial(self):
        r = self.grid.r
        n = r.size
        dr = np.diff(r)
        mid = 0.5 * (r[1:] + r[:-1])
        vol = self.grid.volumes
        # conductance between node i and i+1
        cond = mid / dr
        lower = np.zeros(n)
        upper = np.zeros(n)
        upper[:-1] = cond / vol[:-1]
        lower[1:] = cond / vol[1:]
        diag = -(upper + lower)
        diag[-1] = -cond[-1] / vol[-1]
        self._lower, self._diag, self._upper = lower, diag, upper
        self.diag_abs = np.abs(diag[: n - 1])
        self.diag_max = float(np.max(self.diag_abs))
        m = n - 1
        self.matrix = sp.diags(
            [lower[1:m], diag[:m], upper[: m - 1]], [-1, 0, 1], shape=(m, m), format="csc"
        )

    def _build_cartesian(self):
        m = self.grid.n - 2
        h2 = self.grid.h ** 2
        one = sp.diags([np.ones(m - 1), -2.0 * np.ones(m), np.ones(m - 1)], [-1, 0, 1], shape=(m, m))
        eye = sp.identity(m)
        self.matrix = ((sp.kron(one, eye) + sp.kron(eye, one)) / h2).tocsc()
        self.diag_max = 4.0 / h2
        self.diag_abs = np.full(m * m, self.diag_max)
        k = np.arange(1, m + 1)
        lam = -4.0 / h2 * np.sin(np.pi * k / (2.0 * (m + 1))) ** 2
        self._eig = lam[:, None] + lam[None, :]

    def apply(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        out = np.zeros_like(v)
        if self.grid.is_radial:
            out[:-1] = self._diag[:-1] * v[:-1] + self._upper[:-1] * v[1:]
            out[1:-1] += self._lower[1:-1] * v[:-2]
            return out
        h2 = self.grid.h ** 2
        out[1:-1, 1:-1] = (
            v[2:, 1:-1] + v[:-2, 1:-1] + v[1:-1, 2:] + v[1:-1, :-2] - 4.0 * v[1:-1, 1:-1]
        ) / h2
        return out

    def shifted_solver(self, K):
        """Return ``solve(rhs)`` for ``(Delta - K) x = rhs`` on the interior unknowns.

        Radial grids accept a per-node ``K`` (tridiagonal LU, factored once);
        cartesian grids use an exact sine-transform solve and therefore a
        scalar shift; an array ``K`` is replaced by its maximum.
        """
        if self.grid.is_radial:
            Kv = np.broadcast_to(np.asarray(K, dtype=float), (self.matrix.shape[0],))
            lu = spla.splu((self.matrix - sp.diags(Kv)).tocsc())
            return lu.solve
        k = float(np.max(K))
        denom = self._eig - k
        m = self.grid.n - 2

        def solve(rhs):
            hat = scipy.fft.dstn(np.reshape(rhs, (m, m)), type=1)
            return scipy.fft.idstn(hat / denom, type=1).ravel()

        return solve


def laplacian(grid: Grid) -> DiscreteLaplacian:
    return DiscreteLaplacian(grid)


def integrate(field_or_values, grid: Grid | None = None, simpson: bool = False) -> float:
    """Quadrature over the whole grid (radial weights include 2*pi*r)."""
    if isinstance(field_or_values, Field):
        grid, values = field_or_values.grid, field_or_values.values
    else:
        values = np.asarray(field_or_values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise NonFinite("cannot integrate a field containing NaN or Inf")
    if simpson:
        if grid.is_radial:
            return float(scipy.integrate.simpson(2.0 * np.pi * grid.r * values, x=grid.r))
        x = grid.axis
        return float(scipy.integrate.simpson(scipy.integrate.simpson(values, x=x, axis=1), x=x))
    return float(np.sum(grid.weights * values))


def write_fields_csv(path, grid: Grid, columns: dict[str, np.ndarray], name: str = "fields") -> None:
    """Dump fields with 17 significant digits; the first row carries grid metadata."""
    meta = " ".join(f"{k}={v}" for k, v in grid.describe().items())
    with open(path, "w", newline="") as fh:
        fh.write(f"# name={name} {meta}\n")
        writer = csv.writer(fh)
        if grid.is_radial:
            coords = {"r": grid.r}
        else:
            x1, x2 = grid.coords
            coords = {"x1": x1.ravel(), "x2": x2.ravel()}
        cols = {**coords, **{k: np.ravel(v) for k, v in columns.items()}}
        writer.writerow(list(cols))
        for row in zip(*cols.values()):
            writer.writerow([format(float(x), ".17g") for x in row])
