"""Command-line entry points.

    bihiggs solve-vortex --config run.yaml [--out DIR]
    bihiggs solve-string --config run.yaml [--out DIR]
    bihiggs verify [--config suite.yaml] [--out DIR]
    bihiggs dump-model [--config run.yaml] [--points 11]

Every run directory receives ``summary.json`` (deterministic), ``trace.json``
(timings and iteration histories), ``fields.csv`` and a verbatim copy of the
configuration. The environment variable ``BIHIGGS_OUTPUT_DIR`` overrides the
configured output directory; ``--out`` overrides both.

Exit codes: 0 success, 1 failed verification, 2 solver failure, 3 invalid
configuration, 4 violated gravity hypothesis.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .errors import BiHiggsError, ConfigError, GridError, HypothesisViolation, SolverError
from .geometry import write_fields_csv
from .model import canon
from .observables import gauss_curvature, reconstruct, summarize
from .strings import check_hypothesis, solve_string
from .verify import PROFILES, Suite
from .vortex import solve_vortex

log = logging.getLogger("bihiggs")

EXIT_OK, EXIT_VERIFY, EXIT_SOLVER, EXIT_CONFIG, EXIT_HYPOTHESIS = 0, 1, 2, 3, 4
ENV_OUTPUT = "BIHIGGS_OUTPUT_DIR"
VERIFY_KEYS = {"profile", "checks"}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def output_dir(args, cfg: RunConfig | None, command: str) -> Path:
    if args.out:
        out = Path(args.out)
    elif os.environ.get(ENV_OUTPUT):
        out = Path(os.environ[ENV_OUTPUT])
    elif cfg is not None and cfg.output_dir:
        out = Path(cfg.output_dir)
    else:
        stem = Path(cfg.path).stem if cfg is not None and cfg.path else "default"
        out = Path("runs") / f"{command}-{stem}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _save_config(out: Path, cfg: RunConfig) -> None:
    (out / "config.yaml").write_text(cfg.source_text)


def _header(cfg: RunConfig, model, grid, conf, command: str) -> dict:
    return {
        "command": command,
        "config_sha256": hashlib.sha256(cfg.source_text.encode()).hexdigest(),
        "seed": cfg.seed,
        "model": {"name": model.name, "b": model.b, "lambda1": model.lambda1, "lambda2": model.lambda2,
                  "M_decay": model.M_decay, "bracket_lambdas": list(model.bracket_lambdas())},
        "grid": grid.describe(),
        "vortices": {"points": [list(p) for p in conf.points], "multiplicities": list(conf.multiplicities)},
        "newton_g": conf.newton_g,
    }


def _build(cfg: RunConfig):
    try:
        return cfg.build_model(), cfg.build_grid(), cfg.build_configuration()
    except (BiHiggsError, ValueError) as exc:
        raise ConfigError(f"{cfg.path}: {exc}") from exc


def _field_columns(model, solution) -> dict:
    fields = reconstruct(model, solution)
    cols = {
        "u": solution.u.values,
        "v": solution.v_accurate,
        "phi_sq": fields.phi_sq.values,
        "F12": fields.F12.values,
        "energy_density": fields.energy_density.values,
        "J12": fields.J12.values,
    }
    if fields.eta is not None:
        cols["eta"] = fields.eta.values
        cols["K_g"] = gauss_curvature(fields)
    return cols


def cmd_solve_vortex(args) -> int:
    cfg = load_config(args.config)
    if cfg.newton_g != 0.0:
        raise ConfigError(f"{cfg.path}: newton_g = {cfg.newton_g:g} describes a string; use solve-string")
    model, grid, conf = _build(cfg)
    out = output_dir(args, cfg, "solve-vortex")
    _save_config(out, cfg)
    threads = args.threads or cfg.threads
    t0 = time.perf_counter()
    sol = solve_vortex(model, grid, conf, tol=cfg.tol, max_iter=cfg.max_iter, threads=threads)
    t_solve = time.perf_counter() - t0
    summary = _header(cfg, model, grid, conf, "solve-vortex")
    summary.update({
        "converged": sol.report.converged,
        "iterations": sol.report.iterations,
        "final_residual": sol.report.final_residual,
        "checks": sol.checks,
        "observables": summarize(model, sol, "exponential"),
    })
    summary["flux"] = summary["observables"]["flux"]
    summary["energy"] = summary["observables"]["energy_direct"]
    t1 = time.perf_counter()
    write_fields_csv(out / "fields.csv", grid, _field_columns(model, sol), "vortex")
    trace = {"timings": {"solve_s": t_solve, "output_s": time.perf_counter() - t1},
             "threads": threads, "main": sol.report.trace(), "subsolution": sol.sub.trace(),
             "supersolution": sol.sup.trace()}
    _write_json(out / "summary.json", summary)
    _write_json(out / "trace.json", trace)
    _report(args, f"flux {summary['flux']:.6f} (2 pi N = {2 * math.pi * conf.N:.6f}), "
                  f"energy {summary['energy']:.6f}; results in {out}")
    return EXIT_OK


def cmd_solve_string(args) -> int:
    cfg = load_config(args.config)
    model, grid, conf = _build(cfg)
    check_hypothesis(conf)
    out = output_dir(args, cfg, "solve-string")
    _save_config(out, cfg)
    threads = args.threads or cfg.threads
    kwargs = {} if cfg.ladder is None else {"ladder": cfg.ladder}
    t0 = time.perf_counter()
    sol = solve_string(model, grid, conf, tol=cfg.tol, max_iter=cfg.max_iter, threads=threads, **kwargs)
    t_solve = time.perf_counter() - t0
    delegated = conf.newton_g == 0.0
    summary = _header(cfg, model, grid, conf, "solve-string")
    summary.update({
        "c": sol.c,
        "converged": all(rep.converged for _, rep in sol.delta_ladder),
        "delta_ladder": [{"delta": d, "iterations": rep.iterations, "final_residual": rep.final_residual}
                         for d, rep in sol.delta_ladder],
        "checks": sol.checks,
        "observables": summarize(model, sol, "exponential" if delegated else "power"),
    })
    obs = summary["observables"]
    summary["flux"] = obs["flux"]
    summary["energy"] = obs["energy_direct"]
    if "curvature_total" in obs:
        summary["curvature_total"] = obs["curvature_total"]
    t1 = time.perf_counter()
    write_fields_csv(out / "fields.csv", grid, _field_columns(model, sol), "string")
    trace = {"timings": {"solve_s": t_solve, "output_s": time.perf_counter() - t1}, "threads": threads,
             "rungs": [{"delta": d, **rep.trace()} for d, rep in sol.delta_ladder]}
    _write_json(out / "summary.json", summary)
    _write_json(out / "trace.json", trace)
    msg = f"c = {sol.c:g}, flux {summary['flux']:.6f}"
    if "curvature_total" in summary:
        msg += f", total curvature {summary['curvature_total']:.6f} (16 pi^2 G N = {16 * math.pi ** 2 * conf.newton_g * conf.N:.6f})"
    _report(args, msg + f"; results in {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = load_config(args.config) if args.config else None
    model = canon()
    tol, seed, settings = 1e-10, 0, {}
    if cfg is not None:
        model = _build(cfg)[0]
        tol, seed, settings = cfg.tol, cfg.seed, cfg.verify
        unknown = set(settings) - VERIFY_KEYS
        if unknown:
            raise ConfigError(f"{cfg.path}: unknown verify keys {sorted(unknown)}; allowed: {sorted(VERIFY_KEYS)}")
    profile = settings.get("profile", "full")
    if profile not in PROFILES:
        raise ConfigError(f"verify.profile must be one of {sorted(PROFILES)}, got {profile!r}")
    checks = settings.get("checks")
    if checks is not None:
        unknown = set(checks) - set(Suite.CHECKS)
        if unknown:
            raise ConfigError(f"unknown checks {sorted(unknown)}; available: {list(Suite.CHECKS)}")
    out = output_dir(args, cfg, "verify")
    if cfg is not None:
        _save_config(out, cfg)
    suite = Suite(model, profile, tol=tol, seed=seed)
    t0 = time.perf_counter()
    results = suite.run(checks)
    for res in results:
        print(res.line())
    passed = all(r.passed for r in results)
    verdict = {"model": model.name, "b": model.b, "profile": profile, "seed": seed, "passed": passed,
               "checks": [r.as_dict() for r in results]}
    _write_json(out / "verdict.json", verdict)
    _write_json(out / "trace.json", {"timings": {"total_s": time.perf_counter() - t0,
                                                 "solves_s": {repr(k): v for k, v in suite.timings.items()}}})
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed; verdict in {out / 'verdict.json'}")
    return EXIT_OK if passed else EXIT_VERIFY


def cmd_dump_model(args) -> int:
    model = canon() if not args.config else _build(load_config(args.config))[0]
    t = np.linspace(0.0, 1.0, args.points)
    table = model.dump(t)
    names = [k for k in table if k != "t"]
    print(f"# model {model.name}, b = {model.b:g}")
    print(f"# lambda1 = {model.lambda1:.12g}  lambda2 = {model.lambda2:.12g}  M = {model.M_decay:.12g}")
    print(" ".join(f"{k:>20s}" for k in ["t", *names]))
    for i, ti in enumerate(t):
        print(" ".join(f"{x:20.12g}" for x in [ti, *(float(table[k][i]) for k in names)]))
    return EXIT_OK


def _report(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--out", help="output directory (overrides config and environment)")
    common.add_argument("--threads", type=int, default=None, help="worker threads for the bracket solves")
    common.add_argument("--quiet", action="store_true", help="only warnings and errors on stderr")

    parser = argparse.ArgumentParser(prog="bihiggs", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve-vortex", parents=[common], help="flat-space vortex solve")
    p.set_defaults(func=cmd_solve_vortex, needs_config=True)
    p = sub.add_parser("solve-string", parents=[common], help="gravitating string solve through the delta ladder")
    p.set_defaults(func=cmd_solve_string, needs_config=True)
    p = sub.add_parser("verify", parents=[common], help="run the acceptance suite")
    p.set_defaults(func=cmd_verify, needs_config=False)
    p = sub.add_parser("dump-model", parents=[common], help="print the derived model functions")
    p.add_argument("--points", type=int, default=11, help="number of t samples in [0, 1]")
    p.set_defaults(func=cmd_dump_model, needs_config=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.needs_config and not args.config:
        print(f"error: {args.command} needs --config", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except HypothesisViolation as exc:
        print(f"hypothesis violation: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except (ConfigError, GridError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
