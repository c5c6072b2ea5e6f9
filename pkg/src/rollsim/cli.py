"""Command-line front end.

    rollsim [--config FILE] [--seed N] [--out-dir DIR] [--threads N] [--set KEY=JSON ...] COMMAND

Settings are resolved as built-in defaults, then the JSON config file, then
``--set`` overrides, then the global flags. Every command is a pure function
of the resolved settings: re-running writes byte-identical files.

Exit codes: 0 success, 1 numerical-invariant failure, 2 config or IO error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import development as dev
from . import geometry as geo
from . import io
from . import ldp
from . import slipping as sl
from .paths import SampledPath, replica_rng, sample_brownian, uniform_grid
from .rotation import so_basis

COMMANDS = ("develop", "roll", "rate", "scan", "check")
EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


class InvariantError(RuntimeError):
    pass


@dataclass
class RunConfig:
    manifold: dict = field(default_factory=lambda: {"kind": "sphere", "dim": 2})
    curve: dict = field(default_factory=lambda: {"name": "line"})
    T: float = 1.0
    h: float = 1e-3
    slip: str = "none"   # none, translational, inplace, piecewise, brownian
    measure: dict = field(default_factory=lambda: {"name": "vanishing-mean"})
    eps: list = field(default_factory=lambda: [0.3, 0.1, 0.03])
    twist_eps: float = 0.0
    seed: int = 0
    replicas: int = 1000
    eta: float = 0.5
    scan_mode: str = "brownian"
    threads: Optional[int] = None
    out_dir: str = "."
    rate: dict = field(default_factory=dict)
    check: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.h > 0:
            raise ConfigError(f"h must be positive, got {self.h}")
        if not self.T > 0:
            raise ConfigError(f"T must be positive, got {self.T}")
        eps = self.eps if isinstance(self.eps, list) else [self.eps]
        if any(not (float(e) >= 0) for e in eps):
            raise ConfigError(f"eps values must be nonnegative, got {self.eps}")
        if self.twist_eps < 0:
            raise ConfigError("twist_eps must be nonnegative")
        if self.slip not in ("none", "translational", "inplace", "piecewise", "brownian"):
            raise ConfigError(f"unknown slip mode {self.slip!r}")
        if self.scan_mode not in ldp.SCAN_MODES:
            raise ConfigError(f"unknown scan mode {self.scan_mode!r}")
        if self.replicas < 1:
            raise ConfigError("replicas must be at least 1")
        out = Path(self.out_dir)
        if not out.is_dir():
            raise ConfigError(f"output directory {str(out)!r} does not exist")
        if not os.access(out, os.W_OK):
            raise ConfigError(f"output directory {str(out)!r} is not writable")

    @property
    def eps_list(self) -> list:
        return [float(e) for e in (self.eps if isinstance(self.eps, list) else [self.eps])]


def _line_of(text: str, key: str) -> str:
    for n, line in enumerate(text.splitlines(), 1):
        if f'"{key}"' in line:
            return f"line {n}: "
    return ""


def load_config(path: Optional[str], overrides=(), flags=None) -> RunConfig:
    data = {}
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}: {_line_of(text, key)}unknown field {key!r}")
    for item in overrides:
        key, _, raw = item.partition("=")
        if key not in known:
            raise ConfigError(f"--set: unknown field {key!r}")
        try:
            data[key] = json.loads(raw)
        except json.JSONDecodeError:
            data[key] = raw
    for key, value in (flags or {}).items():
        if value is not None:
            data[key] = value
    try:
        cfg = RunConfig(**data)
        cfg.T, cfg.h, cfg.twist_eps, cfg.eta = float(cfg.T), float(cfg.h), float(cfg.twist_eps), float(cfg.eta)
        cfg.seed, cfg.replicas = int(cfg.seed), int(cfg.replicas)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    cfg.validate()
    return cfg


# --------------------------------------------------------------------------
# builders

def build_manifold(spec: dict) -> geo.ManifoldSpec:
    try:
        return geo.ManifoldSpec.from_json(spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"manifold: {exc}") from exc


def build_curve(spec: dict, config_dir: Path = Path(".")) -> sl.BaseCurve:
    spec = dict(spec)
    name = spec.pop("name", "line")
    try:
        if name == "line":
            return sl.line(**spec)
        if name == "circle":
            return sl.circle(**spec)
        if name == "lissajous":
            return sl.lissajous(**spec)
        if name == "csv":
            header, data = io.read_csv(config_dir / spec["path"])
            return sl.curve_from_samples(data[:, 0], data[:, 1:], name=str(spec["path"]))
    except (TypeError, KeyError, OSError) as exc:
        raise ConfigError(f"curve: {exc}") from exc
    raise ConfigError(f"curve: unknown curve {name!r}")


def build_measure(spec: dict) -> sl.JumpMeasureSpec:
    spec = dict(spec)
    name = spec.pop("name", "vanishing-mean")
    if name in sl.MEASURES:
        return sl.MEASURES[name]()
    if name == "exponential":
        return sl.exponential_measure(float(spec.get("c", 1.0)))
    if name == "power-rate":
        p = float(spec.get("power", 1.0))
        return sl.rate_family(f"power-rate({p:g})", lambda e: e ** -p, float(spec.get("mean", 1.0)))
    raise ConfigError(f"measure: unknown measure {name!r}")


def build_drift(spec: dict, curve: sl.BaseCurve) -> sl.DriftField:
    kind = spec.get("kind", "curve")
    if kind == "curve":
        return sl.curve_drift(curve)
    if kind == "linear":
        d = curve.dim
        A = np.asarray(spec.get("A", np.zeros((d, d)).tolist()), dtype=float)
        return sl.linear_drift(A, spec.get("c"))
    raise ConfigError(f"drift: unknown kind {kind!r}")


def _check_curve_dim(M, curve):
    if curve.dim != M.dim:
        raise ConfigError(f"curve dimension {curve.dim} does not match manifold dimension {M.dim}")


# --------------------------------------------------------------------------
# commands

DEFECT_LIMIT = 1e-9


def cmd_develop(cfg: RunConfig, out: Path) -> dict:
    M = build_manifold(cfg.manifold)
    curve = build_curve(cfg.curve)
    _check_curve_dim(M, curve)
    grid = uniform_grid(cfg.T, cfg.h)
    gamma = curve.sample(grid)
    # on flat backends the roll starts at the curve itself, so the trace reproduces it
    u0 = geo.default_frame(M, gamma.values[0] if M.kind in ("flat", "torus") else None)
    u = dev.develop(M, u0, gamma)
    x = dev.project(u)
    io.write_path(out / "trace.csv", grid, x.points, io.point_names(M.ambient_dim))
    io.write_frames(out / "frames.csv", u)
    summary = {
        "manifold": M.to_json(),
        "curve": cfg.curve,
        "T": cfg.T, "h": cfg.h,
        "trace_length": dev.trace_length(x),
        "total_variation": float(np.sum(np.linalg.norm(gamma.increments, axis=1))),
        "start": x.points[0], "endpoint": x.points[-1],
        "endpoint_distance_to_start": geo.distance(M, x.points[-1], x.points[0]),
        "max_defect": u.max_defect(),
        "corrections": u.stats.get("corrections", 0),
    }
    io.write_json(out / "summary.json", summary)
    if summary["max_defect"] > DEFECT_LIMIT:
        raise InvariantError(f"frame defect {summary['max_defect']} exceeds {DEFECT_LIMIT}")
    return summary


def _perturb(cfg, curve, grid, eps, i):
    """Perturbed curve and its schedule (or None) for eps index i."""
    if cfg.slip == "none" or eps == 0:
        return curve.sample(grid), None
    if cfg.slip == "brownian":
        return sl.brownian_perturb(sl.curve_drift(curve), curve(grid[:1])[0], eps, grid,
                                   replica_rng(cfg.seed, i, 0)), None
    measure = build_measure(cfg.measure)
    sched = sl.sample_schedule(measure, eps, cfg.T, replica_rng(cfg.seed, i, 0))
    return sl.SLIP_MODES[cfg.slip](curve, sched, grid), sched


def cmd_roll(cfg: RunConfig, out: Path) -> dict:
    M = build_manifold(cfg.manifold)
    curve = build_curve(cfg.curve)
    _check_curve_dim(M, curve)
    u0 = geo.default_frame(M)
    basis = so_basis(M.dim)
    base_grid = uniform_grid(cfg.T, cfg.h)
    names = io.point_names(M.ambient_dim)
    runs = []
    for i, eps in enumerate(cfg.eps_list):
        try:
            pert, sched = _perturb(cfg, curve, base_grid, eps, i)
        except sl.BoundViolationError as exc:
            raise InvariantError(str(exc)) from exc
        grid = pert.grid
        orig = curve(grid)
        if cfg.twist_eps > 0:
            w = sample_brownian(basis.size, grid, cfg.twist_eps, replica_rng(cfg.seed, i, 1))
        else:
            w = SampledPath(grid, np.zeros((grid.size, basis.size)), "finite-variation")
        gamma = SampledPath(grid, pert.values, "finite-variation")
        u = dev.stochastic_develop(M, u0, gamma, w, basis)
        tag = f"roll_{i:02d}"
        io.write_path(out / f"{tag}_original.csv", grid, orig, [f"y{j}" for j in range(curve.dim)])
        io.write_path(out / f"{tag}_perturbed.csv", grid, pert.values, [f"y{j}" for j in range(curve.dim)])
        io.write_path(out / f"{tag}_trace.csv", grid, u.bases, names)
        if sched is not None:
            io.write_json(out / f"{tag}_schedule.json", sched.to_json())
        row = {"index": i, "eps": eps, "files": tag,
               "sup_planar_deviation": float(np.max(np.linalg.norm(pert.values - orig, axis=1))),
               "max_defect": u.max_defect()}
        if sched is not None:
            row.update(jumps=len(sched), S_T=sched.total,
                       bounds=sl.slip_bounds(cfg.slip, curve, sched, pert))
        runs.append(row)
        if row["max_defect"] > DEFECT_LIMIT:
            raise InvariantError(f"frame defect {row['max_defect']} exceeds {DEFECT_LIMIT}")
    summary = {"manifold": M.to_json(), "curve": cfg.curve, "slip": cfg.slip, "measure": cfg.measure,
               "twist_eps": cfg.twist_eps, "seed": cfg.seed, "runs": runs}
    io.write_json(out / "roll_summary.json", summary)
    return summary


def cmd_rate(cfg: RunConfig, out: Path) -> dict:
    M = build_manifold(cfg.manifold)
    curve = build_curve(cfg.curve)
    _check_curve_dim(M, curve)
    rc = {"target": "flow", "level": "frame", "drift": {"kind": "curve"}, "twist_amp": 0.0,
          "twist_freq": 1.0, "nodes": 16, "budget": 500, "tol": 1e-6}
    unknown = set(cfg.rate) - set(rc)
    if unknown:
        raise ConfigError(f"rate: unknown fields {sorted(unknown)}")
    rc.update(cfg.rate)
    b = build_drift(rc["drift"], curve)
    u0 = geo.default_frame(M)
    basis = so_basis(M.dim)
    grid = uniform_grid(cfg.T, cfg.h)
    y0 = curve(grid[:1])[0]
    if rc["target"] == "flow":
        y = np.empty((grid.size, M.dim))
        y[0] = y0
        for k in range(grid.size - 1):
            y[k + 1] = y[k] + (grid[k + 1] - grid[k]) * np.asarray(b(grid[k], y[k]))
    elif rc["target"] == "curve":
        y = curve(grid)
    else:
        raise ConfigError(f"rate: unknown target {rc['target']!r}")
    ys = SampledPath(grid, y, "finite-variation")
    fs = SampledPath(grid, rc["twist_amp"] * np.sin(rc["twist_freq"] * grid)[:, None] * np.ones(basis.size),
                     "finite-variation")
    u = dev.stochastic_develop(M, u0, ys, fs, basis)
    opt = ldp.OptimizerConfig(nodes=int(rc["nodes"]), budget=int(rc["budget"]), tol=float(rc["tol"]),
                              y0=tuple(y0))
    if rc["level"] == "frame":
        rep = ldp.rate_of_frame_path(M, u, b, opt, basis=basis)
    elif rc["level"] == "base":
        rep = ldp.rate_of_base_path(M, dev.project(u), u0, b, opt, basis)
    else:
        raise ConfigError(f"rate: unknown level {rc['level']!r}")
    result = rep.to_json()
    result["generating_action"] = ldp.drift_action(ys, b) + ldp.h1_action(fs)
    io.write_json(out / "rate.json", result)
    return result


def cmd_scan(cfg: RunConfig, out: Path) -> dict:
    M = build_manifold(cfg.manifold)
    curve = build_curve(cfg.curve)
    _check_curve_dim(M, curve)
    mode = cfg.scan_mode
    measure = build_measure(cfg.measure) if mode in sl.SLIP_MODES else None
    scfg = ldp.ScanConfig(curve, cfg.T, cfg.h, mode, measure, twist=cfg.twist_eps > 0)
    table = ldp.rare_event_scan(M, scfg, cfg.eta, cfg.eps_list, cfg.replicas, cfg.seed, cfg.threads)
    io.write_csv(out / "scan.csv", ldp.ScanTable.COLUMNS,
                 [[r[c] for c in ldp.ScanTable.COLUMNS] for r in table.rows])
    summary = {"manifold": M.to_json(), "curve": cfg.curve, "mode": mode, "eta": cfg.eta,
               "T": cfg.T, "h": cfg.h, "seed": cfg.seed, "rows": table.rows}
    io.write_json(out / "scan.json", summary)
    return summary


def cmd_check(cfg: RunConfig, out: Path) -> dict:
    cc = {"mean_jump": ["vanishing-mean"], "rate_divergence": ["exploding-rate"],
          "eps": [0.3, 0.2, 0.1], "quadrature_rtol": 0.01,
          "tightness": {"eps": [0.4, 0.2, 0.1], "a": [0.5, 1.0], "eta": [0.5, 1.0], "rho": 0.1,
                        "R": 1000, "h": 0.01}}
    unknown = set(cfg.check) - set(cc)
    if unknown:
        raise ConfigError(f"check: unknown fields {sorted(unknown)}")
    cc.update(cfg.check)
    failures = []
    result = {"mean_jump": [], "rate_divergence": []}
    rows = []
    for name in cc["mean_jump"]:
        spec = build_measure({"name": name} if isinstance(name, str) else name)
        closed = sl.check_mean_jump_condition(spec, cc["eps"])
        quad = sl.check_mean_jump_condition(spec, cc["eps"], method="quadrature")
        for e, v, q in zip(closed.eps, closed.values, quad.values):
            rel = abs(v - q) / max(abs(v), 1e-300)
            rows.append([spec.name, e, v, q, rel])
            if rel > cc["quadrature_rtol"]:
                failures.append(f"{spec.name}: quadrature disagrees at eps={e} ({rel:.3g})")
        result["mean_jump"].append({"measure": spec.name, "verdict": closed.verdict,
                                    "eps": closed.eps, "values": closed.values})
    io.write_csv(out / "check_mean_jump.csv", ["measure", "eps", "eps_log_mean_jump", "quadrature", "rel_diff"], rows)
    rows = []
    for name in cc["rate_divergence"]:
        spec = build_measure({"name": name} if isinstance(name, str) else name)
        tab = sl.check_rate_divergence(spec, cc["eps"])
        rows += [[spec.name, e, v] for e, v in zip(tab.eps, tab.values)]
        result["rate_divergence"].append({"measure": spec.name, "verdict": tab.verdict,
                                          "eps": tab.eps, "values": tab.values})
    io.write_csv(out / "check_rate.csv", ["measure", "eps", "eps_rate"], rows)
    tc = cc["tightness"]
    if tc:
        d = build_manifold(cfg.manifold).dim

        def sampler(eps, R, rng):
            grid = uniform_grid(cfg.T, float(tc["h"]))
            inc = np.sqrt(eps * np.diff(grid))[None, :, None] * rng.standard_normal((R, grid.size - 1, d))
            vals = np.concatenate([np.zeros((R, 1, d)), np.cumsum(inc, axis=1)], axis=1)
            return grid, vals

        tab = ldp.tightness_diagnostic(sampler, tc["eps"], cfg.T, tc["a"], tc["eta"], float(tc["rho"]),
                                       int(tc["R"]), cfg.seed)
        cols = ["eps", "kind", "threshold", "R", "hits", "phat", "eps_log_phat", "censored"]
        io.write_csv(out / "check_tightness.csv", cols, [[r[c] for c in cols] for r in tab.rows])
        result["tightness_verdict"] = tab.verdict
    result["failures"] = failures
    io.write_json(out / "check.json", result)
    if failures:
        raise InvariantError("; ".join(failures))
    return result


HANDLERS = {"develop": cmd_develop, "roll": cmd_roll, "rate": cmd_rate, "scan": cmd_scan, "check": cmd_check}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rollsim", description="Rolling manifolds along perturbed curves.")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--threads", type=int)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=JSON",
                   help="override one config field (applied after --config)")
    p.add_argument("command", choices=COMMANDS)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads
    if threads is None and os.environ.get("ROLLSIM_THREADS"):
        threads = int(os.environ["ROLLSIM_THREADS"])
    try:
        cfg = load_config(args.config, args.overrides,
                          {"seed": args.seed, "out_dir": args.out_dir, "threads": threads})
        HANDLERS[args.command](cfg, Path(cfg.out_dir))
    except ConfigError as exc:
        print(f"rollsim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"rollsim: io error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantError, sl.BoundViolationError) as exc:
        print(f"rollsim: invariant failed: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (geo.DomainError, sl.SaturationError, dev.StepSizeError) as exc:
        print(f"rollsim: numerical failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
