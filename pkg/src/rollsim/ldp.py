"""Rate functionals, exponential-tightness diagnostics and rare-event scans.

Controls are absolutely continuous paths on a grid: y is the slipping
control in R^d and f the twisting control in so(d) coordinates. The
twisting energy is 1/2 int |f'|^2 and the drift action 1/2 int |y' - b|^2,
both discretized with forward differences.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import geometry as geo
from .development import (FramePath, ManifoldPath, develop_batch, lift_with_increments,
                          stochastic_develop)
from .geometry import ManifoldSpec, OrthonormalFrame
from .paths import MatrixPath, SampledPath, batch_modulus, batch_sup_norm, replica_rng, uniform_grid
from .rotation import (RotationPath, SkewBasis, integrate_rotation, project_so, rotation_steps,
                       skew_logm, so_basis)
from .slipping import (BaseCurve, DriftField, JumpMeasureSpec, SlippingSchedule, inplace_slip,
                       piecewise_linear_approx, sample_schedule, translational_slip)

INF = float("inf")


# --------------------------------------------------------------------------
# containers

@dataclass(frozen=True)
class ControlBundle:
    y: SampledPath
    f: SampledPath
    q: Optional[MatrixPath] = None  # second-order control, stored only

    def __post_init__(self):
        if np.max(np.abs(self.f.values[0])) > 1e-12:
            raise ValueError("twisting control must start at 0")
        if not np.isfinite(h1_action(self.f)):
            raise ValueError("twisting control has infinite energy")


@dataclass(frozen=True)
class ActionReport:
    total: float
    drift: float
    twist: float
    feasible: bool
    residual: float
    tol: float
    converged: bool = True
    evaluations: int = 1
    bracket: Optional[tuple] = None
    controls: Optional[ControlBundle] = field(default=None, compare=False, repr=False)

    def to_json(self) -> dict:
        out = {
            "total": self.total, "drift": self.drift, "twist": self.twist,
            "feasible": self.feasible, "residual": self.residual, "tol": self.tol,
            "converged": self.converged, "evaluations": self.evaluations,
        }
        if self.bracket is not None:
            out["bracket"] = list(self.bracket)
        return out


def _report(drift, twist, residual, tol, **kw) -> ActionReport:
    feasible = bool(residual <= tol)
    total = drift + twist if feasible else INF
    return ActionReport(total, drift, twist, feasible, residual, tol, **kw)


# --------------------------------------------------------------------------
# actions

def h1_action(f: SampledPath) -> float:
    """1/2 sum |df|^2 / dt."""
    dt = np.diff(f.grid)
    return float(0.5 * np.sum(np.sum(f.increments ** 2, axis=1) / dt))


def drift_action(y: SampledPath, b: DriftField) -> float:
    """1/2 sum |dy/dt - b(t_i, y_i)|^2 dt."""
    dt = np.diff(y.grid)
    resid = y.increments / dt[:, None] - b.along(y.grid[:-1], y.values[:-1])
    return float(0.5 * np.sum(np.sum(resid ** 2, axis=1) * dt))


def indicator_rate(y: SampledPath, curve: BaseCurve, tol: float) -> float:
    """0 when the discrete derivatives of y and of the curve agree in L^2 within tol, else inf."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    dt = np.diff(y.grid)
    dy = y.increments / dt[:, None]
    dg = np.diff(curve(y.grid), axis=0) / dt[:, None]
    dist = float(np.sqrt(np.sum(np.sum((dy - dg) ** 2, axis=1) * dt)))
    return 0.0 if dist <= tol else INF


# --------------------------------------------------------------------------
# rate evaluation on the frame bundle

@dataclass(frozen=True)
class OptimizerConfig:
    nodes: int = 16
    budget: int = 500
    step: float = 1.0
    fd_step: float = 1e-6
    gtol: float = 1e-8
    tol: float = 1e-6          # feasibility tolerance on the reconstructed path
    y0: Optional[tuple] = None  # starting point of the slipping control (default 0)


def _fiber_coordinates(M: ManifoldSpec, lift: FramePath, target: FramePath) -> np.ndarray:
    """g_k with target frame = lift frame @ g_k."""
    if M.kind == "sphere":
        g = np.swapaxes(lift.frames, -1, -2) @ target.frames
    else:
        g = np.linalg.solve(lift.frames, target.frames)
    return project_so(g)


def _y_from(grid, xis, g, y0) -> SampledPath:
    inc = np.einsum("kji,kj->ki", g[:-1], xis)
    vals = np.vstack([np.zeros((1, xis.shape[1])), np.cumsum(inc, axis=0)]) + y0
    return SampledPath(grid, vals, "finite-variation")


def _reconstruct(M, u0, y, f, basis) -> FramePath:
    return stochastic_develop(M, u0, y, f, basis)


def rate_of_frame_path(M: ManifoldSpec, target: FramePath, b: DriftField,
                       config: OptimizerConfig = OptimizerConfig(),
                       initial: Optional[ControlBundle] = None,
                       basis: Optional[SkewBasis] = None) -> ActionReport:
    """Rate of a frame path: the frame pins both controls, so the minimum is an evaluation.

    The base path is lifted horizontally, the fiber component g = lift^{-1} u
    gives f through the logarithms of its steps, and the anti-development
    increments rotated by g give y. An ``initial`` bundle, when supplied, is
    evaluated as a competing candidate; the smaller feasible total wins.
    """
    basis = basis or so_basis(M.dim)
    u0 = target.frame(0)
    y0 = np.zeros(M.dim) if config.y0 is None else np.asarray(config.y0, dtype=float)
    lift, xis = lift_with_increments(M, u0, ManifoldPath(M, target.grid, target.bases))
    g = _fiber_coordinates(M, lift, target)
    rel = np.swapaxes(g[:-1], -1, -2) @ g[1:]
    finc = basis.coordinates(skew_logm(rel))
    f = SampledPath(target.grid, np.vstack([np.zeros((1, basis.size)), np.cumsum(finc, axis=0)]),
                    "finite-variation")
    y = _y_from(target.grid, xis, g, y0)
    candidates = [ControlBundle(y, f)]
    if initial is not None:
        candidates.append(initial)
    best = None
    for c in candidates:
        rec = _reconstruct(M, u0, c.y, c.f, basis)
        resid = float(max(np.max(np.abs(rec.frames - target.frames)),
                          np.max(np.abs(rec.bases - target.bases))))
        rep = _report(drift_action(c.y, b), h1_action(c.f), resid, config.tol,
                      evaluations=len(candidates), controls=c)
        if best is None or rep.total < best.total:
            best = rep
    return best


def _interp_nodes(grid, node_t, node_vals):
    return np.stack([np.interp(grid, node_t, node_vals[:, j]) for j in range(node_vals.shape[1])], axis=-1)


def rate_of_base_path(M: ManifoldSpec, x: ManifoldPath, u0: OrthonormalFrame, b: DriftField,
                      config: OptimizerConfig = OptimizerConfig(),
                      basis: Optional[SkewBasis] = None) -> ActionReport:
    """Minimize drift + twisting action over controls whose rolling traces x.

    f is piecewise linear on ``config.nodes`` equal intervals with f(0) = 0;
    y is then forced: dy_k = g_k^T xi_k with xi the anti-development
    increments. Finite-difference gradient descent with step halving, at most
    ``config.budget`` evaluations. ``bracket`` holds (best, value at f = 0).
    """
    basis = basis or so_basis(M.dim)
    grid = np.asarray(x.grid, dtype=float)
    y0 = np.zeros(M.dim) if config.y0 is None else np.asarray(config.y0, dtype=float)
    _, xis = lift_with_increments(M, u0, x)
    node_t = np.linspace(grid[0], grid[-1], config.nodes + 1)
    D = basis.size
    evals = 0

    def controls(p):
        nodes = np.vstack([np.zeros((1, D)), p.reshape(config.nodes, D)])
        f = SampledPath(grid, _interp_nodes(grid, node_t, nodes), "finite-variation")
        g = integrate_rotation(f, basis).values
        return _y_from(grid, xis, g, y0), f

    def J(p):
        nonlocal evals
        evals += 1
        y, f = controls(p)
        return drift_action(y, b) + h1_action(f)

    p = np.zeros(config.nodes * D)
    val = J(p)
    f0_value = val
    step = config.step
    converged = False
    while evals + p.size + 1 <= config.budget:
        grad = np.empty_like(p)
        for i in range(p.size):
            q = p.copy()
            q[i] += config.fd_step
            grad[i] = (J(q) - val) / config.fd_step
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= config.gtol:
            converged = True
            break
        while evals < config.budget:
            trial = p - step * grad
            tval = J(trial)
            if tval < val:
                p, val = trial, tval
                step *= 1.5
                break
            step *= 0.5
            if step * gnorm < 1e-14:
                break
        if step * gnorm < 1e-14:
            converged = True
            break
    y, f = controls(p)
    rec = _reconstruct(M, u0, y, f, basis)
    resid = float(np.max(geo.distance_batch(M, rec.bases, x.points)))
    rep = _report(drift_action(y, b), h1_action(f), resid, config.tol,
                  converged=converged, evaluations=evals, bracket=(val, f0_value),
                  controls=ControlBundle(y, f))
    return rep


# --------------------------------------------------------------------------
# tightness

@dataclass(frozen=True)
class TightnessTable:
    rows: list
    verdict: bool


def _cell(eps, hits, R):
    phat = hits / R
    censored = hits == 0
    value = eps * np.log(1.0 / R) if censored else eps * np.log(phat)
    return phat, float(value), censored


def tightness_diagnostic(sampler: Callable, eps_grid, T: float, a_grid, eta_grid, rho: float,
                         R: int = 1000, seed: int = 0) -> TightnessTable:
    """Empirical eps log P(||x||_T >= a) and eps log P(w_T(x, rho) >= eta).

    ``sampler(eps, R, rng)`` returns (grid, values) with values of shape (R, N+1, m).
    Zero-hit cells report the floor eps log(1/R) and are marked censored.
    Verdict: along decreasing eps every column is nonincreasing, counting
    censored cells as -inf.
    """
    eps_sorted = sorted(eps_grid, reverse=True)
    rows = []
    for i, eps in enumerate(eps_sorted):
        grid, vals = sampler(eps, R, replica_rng(seed, i))
        keep = grid <= T + 1e-12
        grid, vals = grid[keep], vals[:, keep]
        sup = batch_sup_norm(vals)
        mod = batch_modulus(grid, vals, rho)
        for kind, stat, thresholds in (("sup", sup, a_grid), ("modulus", mod, eta_grid)):
            for a in thresholds:
                hits = int(np.count_nonzero(stat >= a))
                phat, value, censored = _cell(eps, hits, R)
                rows.append({"eps": float(eps), "kind": kind, "threshold": float(a), "R": R,
                             "hits": hits, "phat": phat, "eps_log_phat": value, "censored": censored})
    verdict = True
    for kind, thresholds in (("sup", a_grid), ("modulus", eta_grid)):
        for a in thresholds:
            col = [(-np.inf if r["censored"] else r["eps_log_phat"]) for r in rows
                   if r["kind"] == kind and r["threshold"] == float(a)]
            verdict &= all(c2 <= c1 for c1, c2 in zip(col, col[1:]))
    return TightnessTable(rows, bool(verdict))


# --------------------------------------------------------------------------
# rare-event scans

SCAN_MODES = ("brownian", "translational", "inplace", "piecewise", "twist-only")
CHUNK = 256


@dataclass(frozen=True)
class ScanConfig:
    curve: BaseCurve
    T: float = 1.0
    h: float = 1e-3
    mode: str = "brownian"
    measure: Optional[JumpMeasureSpec] = None
    twist: bool = False          # add sqrt(eps) twisting noise on top of the curve perturbation
    u0: Optional[OrthonormalFrame] = None


@dataclass(frozen=True)
class ScanTable:
    rows: list

    COLUMNS = ("eps", "R", "hits", "phat", "ci_lo", "ci_hi", "eps_log_phat")

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def flags(self) -> list:
        return [r["flag"] for r in self.rows]


def wilson_interval(hits: int, R: int, z: float = 1.959963984540054):
    if R < 1:
        raise ValueError("need at least one replica")
    p = hits / R
    denom = 1 + z * z / R
    centre = (p + z * z / (2 * R)) / denom
    half = z * np.sqrt(p * (1 - p) / R + z * z / (4 * R * R)) / denom
    lo = 0.0 if hits == 0 else max(0.0, centre - half)
    hi = 1.0 if hits == R else min(1.0, centre + half)
    return lo, hi


_SLIPS = {"translational": translational_slip, "inplace": inplace_slip, "piecewise": piecewise_linear_approx}


def _perturbed_increments(cfg: ScanConfig, grid, eps, rng, D):
    """(dgamma (N, d), dw (N, D) or None) for one replica."""
    curve = cfg.curve
    d = curve.dim
    if cfg.mode == "brownian":
        dg = np.diff(curve(grid), axis=0) + np.sqrt(eps * np.diff(grid))[:, None] * rng.standard_normal((grid.size - 1, d))
    elif cfg.mode == "twist-only":
        dg = np.diff(curve(grid), axis=0)
    else:
        sched = sample_schedule(cfg.measure, eps, float(grid[-1]), rng)
        # node values of the perturbed curve are exact; the shared grid keeps replicas batched
        vals = _SLIPS[cfg.mode](curve, sched, grid, check=False)
        dg = np.diff(vals.at(grid), axis=0)
    dw = None
    if cfg.twist or cfg.mode == "twist-only":
        dw = np.sqrt(eps * np.diff(grid))[:, None] * rng.standard_normal((grid.size - 1, D))
    return dg, dw


def _scan_chunk(M, cfg, grid, x0, E0, limit, eta, eps, seed, i, lo, hi, basis):
    dgs, dws = [], []
    for r in range(lo, hi):
        dg, dw = _perturbed_increments(cfg, grid, eps, replica_rng(seed, i, r), basis.size)
        dgs.append(dg)
        dws.append(dw)
    vertical = None if dws[0] is None else rotation_steps(np.stack(dws), basis)
    bases, _, _ = develop_batch(M, x0, E0, grid, np.stack(dgs), vertical, record_frames=False)
    dist = geo.distance_batch(M, bases, limit[None])
    return int(np.count_nonzero(np.max(dist, axis=1) >= eta))


def default_threads() -> int:
    return int(os.environ.get("ROLLSIM_THREADS", "1"))


def rare_event_scan(M: ManifoldSpec, cfg: ScanConfig, eta: float, eps_grid, R: int,
                    seed: int = 0, threads: Optional[int] = None) -> ScanTable:
    """Monte Carlo estimate of P(sup_t d(x_t, x^eps_t) >= eta) for each eps.

    Replica r at eps index i draws from the stream (seed, i, r), and replicas
    are processed in fixed-size chunks, so the table does not depend on the
    number of threads.
    """
    if cfg.mode not in SCAN_MODES:
        raise ValueError(f"unknown scan mode {cfg.mode!r}")
    if cfg.mode in _SLIPS and cfg.measure is None:
        raise ValueError("slipping modes need a jump measure")
    threads = threads or default_threads()
    basis = so_basis(M.dim)
    u0 = cfg.u0 or geo.default_frame(M)
    x0, E0 = np.asarray(u0.base, dtype=float), np.asarray(u0.frame, dtype=float)
    grid = uniform_grid(cfg.T, cfg.h)
    lb, _, _ = develop_batch(M, x0, E0, grid, np.diff(cfg.curve(grid), axis=0)[None], record_frames=False)
    limit = lb[0]
    rows = []
    for i, eps in enumerate(eps_grid):
        chunks = [(lo, min(lo + CHUNK, R)) for lo in range(0, R, CHUNK)]
        job = lambda c: _scan_chunk(M, cfg, grid, x0, E0, limit, eta, eps, seed, i, c[0], c[1], basis)
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                hits = sum(pool.map(job, chunks))
        else:
            hits = sum(map(job, chunks))
        rows.append(scan_row(eps, hits, R))
    return ScanTable(rows)


def scan_row(eps: float, hits: int, R: int) -> dict:
    phat, value, censored = _cell(eps, hits, R)
    lo, hi = wilson_interval(hits, R)
    flag = "no-hit" if hits == 0 else ("all-hit" if hits == R else "")
    return {"eps": float(eps), "R": int(R), "hits": int(hits), "phat": phat, "ci_lo": lo, "ci_hi": hi,
            "eps_log_phat": value, "flag": flag}
