"""Cartan development on the orthonormal frame bundle, with and without twisting.

A frame ``u = (x, E)`` stores the base point ``x`` and the frame vectors as the
columns of ``E``. The horizontal field H_xi moves the base along ``E xi`` and
parallel-transports the columns:

    chart backends   dx = E xi,   dE^i_m = -Gamma^i_jl (E xi)^j E^l_m
    embedded sphere  dx = E xi,   dE_m   = -((E xi) . E_m) x

Every development operation is built on one batched kernel that takes a stack
of replicas with shared time grid, so Monte Carlo callers and single-path
callers share the same arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from . import geometry as geo
from .geometry import DomainError, ManifoldSpec, OrthonormalFrame
from .paths import SampledPath
from .rotation import RotationPath, SkewBasis, integrate_rotation, rotation_steps, so_basis

REORTH_THRESHOLD = 1e-9


class StepSizeError(ValueError):
    """A manifold step is too large to invert the frame map."""


@dataclass(frozen=True)
class FramePath:
    manifold: ManifoldSpec
    grid: np.ndarray
    bases: np.ndarray   # (N+1, n)
    frames: np.ndarray  # (N+1, n, d)
    stats: dict = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return self.grid.size

    def frame(self, k: int) -> OrthonormalFrame:
        return OrthonormalFrame(self.bases[k], self.frames[k])

    def max_defect(self) -> float:
        return float(np.max(geo.frame_defect(self.manifold, self.bases, self.frames)))


@dataclass(frozen=True)
class ManifoldPath:
    manifold: ManifoldSpec
    grid: np.ndarray
    points: np.ndarray  # (N+1, n)


# --------------------------------------------------------------------------
# batched kernel

def _horizontal_field(M: ManifoldSpec, x, E, xi):
    v = np.einsum("...ij,...j->...i", E, xi)
    if M.kind == "sphere":
        coef = np.einsum("...i,...ij->...j", v, E)
        dE = -x[..., :, None] * coef[..., None, :]
    elif M.kind in ("flat", "torus"):
        dE = None
    else:
        gam = geo.christoffel_batch(M, x)
        dE = -np.einsum("...ijl,...j,...lm->...im", gam, v, E)
    return v, dE


def _rk4(M: ManifoldSpec, x, E, xi):
    """One RK4 step of the horizontal flow over unit pseudo-time with increment ``xi``."""
    v1, e1 = _horizontal_field(M, x, E, xi)
    if e1 is None:
        return x + v1, E.copy()
    v2, e2 = _horizontal_field(M, x + 0.5 * v1, E + 0.5 * e1, xi)
    v3, e3 = _horizontal_field(M, x + 0.5 * v2, E + 0.5 * e2, xi)
    v4, e4 = _horizontal_field(M, x + v3, E + e3, xi)
    x_new = x + (v1 + 2.0 * (v2 + v3) + v4) / 6.0
    E_new = E + (e1 + 2.0 * (e2 + e3) + e4) / 6.0
    return x_new, E_new


def _rk4_adaptive(M: ManifoldSpec, x, E, xi, budget):
    """Batched counterpart of the compiled adaptive step: replicas whose step adds
    more than ``budget`` to the defect are redone with 2, 4, ... equal substeps."""
    x_new, E_new = _rk4(M, x, E, xi)
    if M.kind in ("flat", "torus"):
        return x_new, E_new
    d0 = geo.frame_defect(M, x, E)
    bad = geo.frame_defect(M, x_new, E_new) > d0 + budget
    m = 1
    while np.any(bad) and m < K.MAX_SUBSTEPS:
        m *= 2
        xb, Eb = x[bad], E[bad]
        for _ in range(m):
            xb, Eb = _rk4(M, xb, Eb, xi[bad] / m)
        x_new[bad], E_new[bad] = xb, Eb
        bad[bad] = geo.frame_defect(M, xb, Eb) > d0[bad] + budget
    return x_new, E_new


def _check_step_domain(M: ManifoldSpec, x, t):
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite state during integration", t)
    if M.kind == "hyperbolic" and np.any(x[..., 1] <= 0):
        raise DomainError("left the half-plane (y <= 0)", t)
    if M.domain is not None and not np.all(M.domain(x)):
        raise DomainError("left the chart domain", t)


def _correct(M, x, E, threshold, stats):
    defect = geo.frame_defect(M, x, E)
    stats["max_defect_pre"] = max(stats["max_defect_pre"], float(np.max(defect)))
    bad = defect > K.TRIGGER
    if np.any(bad):
        stats["corrections"] += int(np.count_nonzero(bad))
        xb, Eb = geo.polar_orthonormalize(M, x[bad], E[bad])
        x = x.copy()
        E = E.copy()
        x[bad] = xb
        E[bad] = Eb
        defect = geo.frame_defect(M, x, E)
    stats["max_defect_post"] = max(stats["max_defect_post"], float(np.max(defect)))
    return x, E


def develop_batch(M: ManifoldSpec, x0, E0, grid, dgamma, vertical=None, *,
                  record_frames: bool = True, threshold: float = REORTH_THRESHOLD):
    """Integrate R replicas that share ``grid``.

    dgamma:   (R, N, d) Euclidean increments for the horizontal substep.
    vertical: optional (R, N, d, d) rotation factors applied on the right after
              each horizontal substep (Lie-Trotter splitting).
    Returns (bases (R, N+1, n), frames (R, N+1, n, d) or None, stats).
    """
    dgamma = np.asarray(dgamma, dtype=float)
    R, N, _ = dgamma.shape
    x = np.ascontiguousarray(np.broadcast_to(np.asarray(x0, dtype=float), (R, M.ambient_dim)))
    E = np.ascontiguousarray(np.broadcast_to(np.asarray(E0, dtype=float), (R, M.ambient_dim, M.dim)))
    bases = np.empty((R, N + 1, M.ambient_dim))
    frames = np.empty((R, N + 1, M.ambient_dim, M.dim)) if record_frames else None
    if M.kind in K.KIND_CODES:
        return _develop_compiled(M, x, E, grid, dgamma, vertical, record_frames, threshold, bases, frames)
    bases[:, 0] = x
    if record_frames:
        frames[:, 0] = E
    stats = {"max_defect_pre": 0.0, "max_defect_post": 0.0, "corrections": 0}
    budget = (threshold / M.dim if vertical is not None else threshold) - K.TRIGGER
    for k in range(N):
        x, E = _rk4_adaptive(M, x, E, dgamma[:, k], budget)
        if vertical is not None:
            E = E @ vertical[:, k]
        _check_step_domain(M, x, grid[k + 1])
        x, E = _correct(M, x, E, threshold, stats)
        x = geo.wrap(M, x)
        bases[:, k + 1] = x
        if record_frames:
            frames[:, k + 1] = E
    return bases, frames, stats


def _develop_compiled(M, x, E, grid, dgamma, vertical, record_frames, threshold, bases, frames):
    R, N, d = dgamma.shape
    has_vertical = vertical is not None
    vert = np.ascontiguousarray(vertical, dtype=float) if has_vertical else np.zeros((R, N, d, d))
    frame_buf = frames if record_frames else np.empty((1, 1, M.ambient_dim, M.dim))
    stats = np.zeros(3)
    status, r, k = K.develop_loop(K.KIND_CODES[M.kind], float(M.period), x, E,
                                  np.ascontiguousarray(dgamma), vert, has_vertical, float(threshold),
                                  record_frames, bases, frame_buf, stats)
    if status != K.OK:
        raise DomainError(f"replica {r} left the domain of the {M.kind} backend", float(grid[k]))
    return bases, frames, _stats_dict(stats)


def _stats_dict(stats):
    return {"max_defect_pre": float(stats[0]), "max_defect_post": float(stats[1]),
            "corrections": int(stats[2])}


# --------------------------------------------------------------------------
# single-path operations

def _frame_arrays(M: ManifoldSpec, u0: OrthonormalFrame):
    x0 = np.asarray(u0.base, dtype=float)
    E0 = np.asarray(u0.frame, dtype=float)
    geo.check_domain(M, x0)
    if E0.shape != (M.ambient_dim, M.dim):
        raise ValueError(f"frame must be {M.ambient_dim}x{M.dim}")
    return x0, E0


def horizontal_step(M: ManifoldSpec, u: OrthonormalFrame, xi, h: float,
                    threshold: float = REORTH_THRESHOLD) -> OrthonormalFrame:
    """One RK4 step of H_xi over time h; substeps keep the step within ``threshold`` of frame defect."""
    x, E = _frame_arrays(M, u)
    inc = h * np.asarray(xi, dtype=float)
    bases, frames, _ = develop_batch(M, x, E, np.array([0.0, h]), inc[None, None], threshold=threshold)
    return OrthonormalFrame(bases[0, 1], frames[0, 1])


def _single(M, u0, grid, dgamma, vertical=None) -> FramePath:
    x0, E0 = _frame_arrays(M, u0)
    bases, frames, stats = develop_batch(M, x0, E0, grid, dgamma[None],
                                         None if vertical is None else vertical[None])
    return FramePath(M, np.asarray(grid, dtype=float), bases[0], frames[0], stats)


def develop(M: ManifoldSpec, u0: OrthonormalFrame, gamma: SampledPath) -> FramePath:
    """Roll M along gamma without slipping or twisting."""
    if gamma.role in ("local-martingale", "semimartingale"):
        raise ValueError("develop expects a finite-variation curve; use stochastic_develop")
    _check_dim(M, gamma)
    return _single(M, u0, gamma.grid, gamma.increments)


def stochastic_develop(M: ManifoldSpec, u0: OrthonormalFrame, gamma: SampledPath,
                       w: SampledPath, basis: Optional[SkewBasis] = None) -> FramePath:
    """Rolling along gamma with twisting driven by w (Lie-Trotter splitting per step)."""
    _check_dim(M, gamma)
    basis = basis or so_basis(M.dim)
    _check_shared(gamma, w, basis)
    vertical = rotation_steps(w.increments, basis)
    return _single(M, u0, gamma.grid, gamma.increments, vertical)


def develop_decomposed(M: ManifoldSpec, u0: OrthonormalFrame, gamma: SampledPath,
                       w: SampledPath, basis: Optional[SkewBasis] = None):
    """Solve the twisting g and the horizontal lift separately and recombine.

    g integrates dg = g A_alpha o dw^alpha; the horizontal lift is driven by the
    rotated increments (g_k + g_{k+1})/2 dgamma_k (midpoint Stratonovich rule);
    u is the lift with frames right-multiplied by g.
    Returns (lift, g, u).
    """
    _check_dim(M, gamma)
    basis = basis or so_basis(M.dim)
    _check_shared(gamma, w, basis)
    g = integrate_rotation(w, basis)
    gmid = 0.5 * (g.values[:-1] + g.values[1:])
    dzeta = np.einsum("kij,kj->ki", gmid, gamma.increments)
    lift = _single(M, u0, gamma.grid, dzeta)
    u_frames = lift.frames @ g.values
    u = FramePath(M, lift.grid, lift.bases.copy(), u_frames, dict(lift.stats))
    return lift, g, u


def _check_dim(M, gamma):
    if gamma.dim != M.dim:
        raise ValueError(f"curve has dimension {gamma.dim}, manifold has {M.dim}")


def _check_shared(gamma, w, basis):
    if w.dim != basis.size:
        raise ValueError(f"twisting driver needs {basis.size} components")
    if w.grid.size != gamma.grid.size or np.any(w.grid != gamma.grid):
        raise ValueError("curve and twisting driver must share a grid")


# --------------------------------------------------------------------------
# inverse problems

def _solve_frame(M: ManifoldSpec, E, r):
    if M.kind == "sphere":
        return E.T @ r
    return np.linalg.solve(E, r)


def _invert_step(M, x, E, target, t, max_iter=30):
    """Find xi with base(RK4 step of H_xi from (x, E)) = target."""
    dx = geo.minimal_image(M, target - x)
    xi = _solve_frame(M, E, dx)
    for _ in range(max_iter):
        xn, En = _rk4_adaptive(M, x[None], E[None], xi[None], REORTH_THRESHOLD - K.TRIGGER)
        r = geo.minimal_image(M, target - xn[0])
        delta = _solve_frame(M, E, r)
        xi = xi + delta
        if np.linalg.norm(delta) <= 1e-15 * (1.0 + np.linalg.norm(xi)):
            break
    else:
        if np.linalg.norm(delta) > 1e-10 * (1.0 + np.linalg.norm(xi)):
            raise StepSizeError(f"frame map could not be inverted (step too large) at t={t!r}")
    xn, En = _rk4_adaptive(M, x[None], E[None], xi[None], REORTH_THRESHOLD - K.TRIGGER)
    if not np.linalg.norm(geo.minimal_image(M, target - xn[0])) <= 1e-8:
        raise StepSizeError(f"frame map could not be inverted (step too large) at t={t!r}")
    return xi, xn[0], En[0]


def _lift(M: ManifoldSpec, u0: OrthonormalFrame, x: ManifoldPath):
    x0, E0 = _frame_arrays(M, u0)
    pts = np.asarray(x.points, dtype=float)
    if geo.distance_batch(M, pts[0], x0) > 1e-9:
        raise ValueError("curve must start at the base point of u0")
    n = pts.shape[0]
    frames = np.empty((n, M.ambient_dim, M.dim))
    bases = np.empty_like(pts)
    xis = np.zeros((n - 1, M.dim))
    grid = np.asarray(x.grid, dtype=float)
    if M.kind in K.KIND_CODES:
        stats = np.zeros(3)
        status, k = K.lift_loop(K.KIND_CODES[M.kind], float(M.period), x0, E0,
                                np.ascontiguousarray(pts), REORTH_THRESHOLD, bases, frames, xis, stats, 30)
        if status == K.NOT_INVERTIBLE:
            raise StepSizeError(f"frame map could not be inverted (step too large) at t={grid[k]!r}")
        if status == K.DOMAIN:
            raise DomainError("lift left the domain", float(grid[k]))
        return FramePath(M, grid, bases, frames, _stats_dict(stats)), xis
    frames[0], bases[0] = E0, x0
    xc, Ec = x0, E0
    stats = {"max_defect_pre": 0.0, "max_defect_post": 0.0, "corrections": 0}
    for k in range(n - 1):
        xi, xn, En = _invert_step(M, xc, Ec, pts[k + 1], grid[k + 1])
        _check_step_domain(M, xn, grid[k + 1])
        xn, En = _correct(M, xn[None], En[None], REORTH_THRESHOLD, stats)
        xc, Ec = geo.wrap(M, xn[0]), En[0]
        xis[k] = xi
        bases[k + 1], frames[k + 1] = xc, Ec
    return FramePath(M, grid, bases, frames, stats), xis


def horizontal_lift(M: ManifoldSpec, u0: OrthonormalFrame, x: ManifoldPath) -> FramePath:
    """Parallel-transport u0 along the manifold curve x."""
    return _lift(M, u0, x)[0]


def antidevelop(M: ManifoldSpec, u0: OrthonormalFrame, x: ManifoldPath) -> SampledPath:
    """Euclidean curve whose development from u0 traces x."""
    _, xis = _lift(M, u0, x)
    vals = np.vstack([np.zeros((1, M.dim)), np.cumsum(xis, axis=0)])
    return SampledPath(x.grid, vals, "finite-variation")


def lift_with_increments(M: ManifoldSpec, u0: OrthonormalFrame, x: ManifoldPath):
    """Horizontal lift together with the per-step anti-development increments."""
    return _lift(M, u0, x)


# --------------------------------------------------------------------------
# projection and length

def project(u: FramePath) -> ManifoldPath:
    return ManifoldPath(u.manifold, u.grid, u.bases.copy())


def trace_length(x: ManifoldPath) -> float:
    """Riemannian length of the polygon through the nodes.

    Built-in backends sum exact geodesic distances between consecutive nodes
    (minimal image on the torus); chart backends use the metric at segment
    midpoints.
    """
    M = x.manifold
    pts = np.asarray(x.points, dtype=float)
    if M.kind != "chart":
        return float(np.sum(geo.distance_batch(M, pts[:-1], pts[1:])))
    dx = np.diff(pts, axis=0)
    G = geo.metric_batch(M, 0.5 * (pts[:-1] + pts[1:]))
    return float(np.sum(np.sqrt(np.einsum("ki,kij,kj->k", dx, G, dx))))
