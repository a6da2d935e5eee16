"""YAML run configuration with line-numbered validation.

Example::

    model:
      builtin: canon          # or U: [-0.5, 0.5] and G: [1.0] (ascending powers)
      b: 1.0
    grid:
      kind: radial            # radial: r_max, n_r, stretch / cartesian: half_width, n
      r_max: 100
      n_r: 4096
    vortices:
      points: [[0, 0]]
      multiplicities: [1]
    newton_g: 0.0
    c: auto
    solver:
      tol: 1.0e-10
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .geometry import Grid, VortexConfiguration
from .model import REGISTRY, ModelSpec, builtin, polynomial_model

TOP_KEYS = {"model", "grid", "vortices", "newton_g", "c", "ladder", "solver", "output", "seed", "verify"}
MODEL_KEYS = {"builtin", "U", "G", "b", "name"}
GRID_KEYS = {"kind", "r_max", "n_r", "stretch", "half_width", "n"}
VORTEX_KEYS = {"points", "multiplicities"}
SOLVER_KEYS = {"tol", "max_iter", "threads"}
OUTPUT_KEYS = {"dir"}


@dataclass
class RunConfig:
    model: dict
    grid: dict
    vortices: dict
    newton_g: float = 0.0
    c: float | str = "auto"
    ladder: tuple | None = None
    tol: float = 1e-10
    max_iter: int = 50_000
    threads: int = 2
    output_dir: str | None = None
    seed: int = 0
    verify: dict = field(default_factory=dict)
    source_text: str = ""
    path: str | None = None

    def build_model(self) -> ModelSpec:
        m = self.model
        if "builtin" in m:
            return builtin(m["builtin"], m.get("b"))
        return polynomial_model(m["U"], m["G"], m.get("b", 1.0), m.get("name", "polynomial"))

    def build_grid(self) -> Grid:
        g = self.grid
        if g["kind"] == "radial":
            return Grid.radial(g["r_max"], g["n_r"], g.get("stretch", 4.0))
        return Grid.cartesian(g["half_width"], g["n"])

    def build_configuration(self) -> VortexConfiguration:
        v = self.vortices
        return VortexConfiguration.build(v["points"], v.get("multiplicities"), self.newton_g, self.c)


def _lines(text: str) -> dict:
    """Map key paths (tuples) to 1-based source lines."""
    out: dict = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(_fmt(line, f"YAML syntax error: {exc}")) from exc

    def walk(node, path):
        out[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                walk(v, path + (k.value,))
                out.setdefault(path + (k.value,), k.start_mark.line + 1)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    if root is not None:
        walk(root, ())
    return out


def _fmt(line, msg, path=None) -> str:
    where = f"line {line}" if line else "config"
    key = f" [{'.'.join(str(p) for p in path)}]" if path else ""
    return f"{where}{key}: {msg}"


class _Checker:
    def __init__(self, lines: dict, source: str):
        self.lines = lines
        self.source = source

    def fail(self, path, msg):
        line = None
        p = tuple(path)
        while p and p not in self.lines:
            p = p[:-1]
        line = self.lines.get(p)
        raise ConfigError(f"{self.source}:{_fmt(line, msg, path)}")

    def number(self, value, path, positive=False, integer=False, minimum=None):
        if isinstance(value, str):
            try:
                value = float(value)  # YAML 1.1 reads 1e-10 (no dot) as a string
            except ValueError:
                self.fail(path, f"expected a number, got {value!r}")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            self.fail(path, "value must be finite")
        if integer:
            if float(value) != int(value):
                self.fail(path, f"expected an integer, got {value!r}")
            value = int(value)
        if positive and not value > 0:
            self.fail(path, f"must be positive, got {value!r}")
        if minimum is not None and value < minimum:
            self.fail(path, f"must be >= {minimum}, got {value!r}")
        return value

    def mapping(self, value, path, allowed):
        if not isinstance(value, dict):
            self.fail(path, "expected a mapping")
        for k in value:
            if k not in allowed:
                self.fail(tuple(path) + (k,), f"unknown key {k!r}; allowed: {sorted(allowed)}")
        return value


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    lines = _lines(text)
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:  # pragma: no cover - compose already caught syntax errors
        raise ConfigError(f"{source}: {exc}") from exc
    ck = _Checker(lines, source)
    if raw is None:
        ck.fail((), "empty configuration")
    ck.mapping(raw, (), TOP_KEYS)
    for key in ("model", "grid", "vortices"):
        if key not in raw:
            ck.fail((), f"missing required section {key!r}")

    model = dict(ck.mapping(raw["model"], ("model",), MODEL_KEYS))
    if "builtin" in model:
        if model["builtin"] not in REGISTRY:
            ck.fail(("model", "builtin"), f"unknown builtin {model['builtin']!r}; choose from {sorted(REGISTRY)}")
        if "U" in model or "G" in model:
            ck.fail(("model",), "give either 'builtin' or polynomial 'U'/'G', not both")
    else:
        for k in ("U", "G"):
            if k not in model:
                ck.fail(("model",), f"polynomial models need {k!r} coefficients (or use 'builtin')")
            if not isinstance(model[k], list) or not model[k]:
                ck.fail(("model", k), "expected a non-empty list of coefficients")
            model[k] = [ck.number(x, ("model", k, i)) for i, x in enumerate(model[k])]
    if "b" in model:
        model["b"] = ck.number(model["b"], ("model", "b"), positive=True)

    grid = dict(ck.mapping(raw["grid"], ("grid",), GRID_KEYS))
    kind = grid.get("kind")
    if kind == "radial":
        for k in ("r_max", "n_r"):
            if k not in grid:
                ck.fail(("grid",), f"radial grids need {k!r}")
        grid["r_max"] = ck.number(grid["r_max"], ("grid", "r_max"), positive=True)
        grid["n_r"] = ck.number(grid["n_r"], ("grid", "n_r"), integer=True, minimum=4)
        if "stretch" in grid:
            grid["stretch"] = ck.number(grid["stretch"], ("grid", "stretch"), minimum=0.0)
    elif kind == "cartesian":
        for k in ("half_width", "n"):
            if k not in grid:
                ck.fail(("grid",), f"cartesian grids need {k!r}")
        grid["half_width"] = ck.number(grid["half_width"], ("grid", "half_width"), positive=True)
        grid["n"] = ck.number(grid["n"], ("grid", "n"), integer=True, minimum=4)
    else:
        ck.fail(("grid", "kind"), f"grid kind must be 'radial' or 'cartesian', got {kind!r}")

    vort = dict(ck.mapping(raw["vortices"], ("vortices",), VORTEX_KEYS))
    pts = vort.get("points")
    if not isinstance(pts, list) or not pts:
        ck.fail(("vortices", "points"), "expected a non-empty list of [x1, x2] pairs")
    clean = []
    for i, p in enumerate(pts):
        if not isinstance(p, list) or len(p) != 2:
            ck.fail(("vortices", "points", i), f"expected an [x1, x2] pair, got {p!r}")
        clean.append([ck.number(x, ("vortices", "points", i, j)) for j, x in enumerate(p)])
    vort["points"] = clean
    mult = vort.get("multiplicities")
    if mult is not None:
        if not isinstance(mult, list) or len(mult) != len(clean):
            ck.fail(("vortices", "multiplicities"), "must list one positive integer per point")
        vort["multiplicities"] = [ck.number(m, ("vortices", "multiplicities", i), integer=True, minimum=1)
                                  for i, m in enumerate(mult)]

    newton_g = ck.number(raw.get("newton_g", 0.0), ("newton_g",), minimum=0.0)
    c = raw.get("c", "auto")
    if c != "auto":
        c = ck.number(c, ("c",))
    ladder = raw.get("ladder")
    if ladder is not None:
        if not isinstance(ladder, list) or not ladder:
            ck.fail(("ladder",), "expected a list of delta values")
        ladder = tuple(ck.number(d, ("ladder", i), minimum=0.0) for i, d in enumerate(ladder))
        if ladder[-1] != 0.0 or any(b >= a for a, b in zip(ladder, ladder[1:])) or ladder[0] >= 0.5:
            ck.fail(("ladder",), "delta values must decrease strictly from below 1/2 and end at 0")

    solver = dict(ck.mapping(raw.get("solver", {}) or {}, ("solver",), SOLVER_KEYS))
    tol = ck.number(solver.get("tol", 1e-10), ("solver", "tol"), positive=True)
    max_iter = ck.number(solver.get("max_iter", 50_000), ("solver", "max_iter"), integer=True, minimum=1)
    threads = ck.number(solver.get("threads", 2), ("solver", "threads"), integer=True, minimum=1)
    output = dict(ck.mapping(raw.get("output", {}) or {}, ("output",), OUTPUT_KEYS))
    out_dir = output.get("dir")
    if out_dir is not None and not isinstance(out_dir, str):
        ck.fail(("output", "dir"), "expected a path string")
    seed = ck.number(raw.get("seed", 0), ("seed",), integer=True, minimum=0)
    verify = raw.get("verify", {}) or {}
    if not isinstance(verify, dict):
        ck.fail(("verify",), "expected a mapping")

    cfg = RunConfig(model, grid, vort, float(newton_g), c, ladder, float(tol), max_iter, threads, out_dir,
                    seed, verify, text, source)
    # semantic checks that need the built objects
    grid_obj = cfg.build_grid()
    conf = cfg.build_configuration()
    if grid_obj.is_radial and conf.max_radius > 0.0:
        ck.fail(("grid", "kind"), "radial grids require every vortex at the origin; use a cartesian grid")
    if not grid_obj.extent > 4.0 * conf.max_radius:
        ck.fail(("grid",), f"domain extent {grid_obj.extent:g} must exceed 4x the largest |p_s| = "
                           f"{conf.max_radius:g}")
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text, str(p))
