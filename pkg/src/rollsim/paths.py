"""Sampled paths, Brownian sampling, variations and path integrals.

Paths live on a strictly increasing time grid and are treated as piecewise
linear between nodes. Semimartingale paths carry their finite-variation part
and their local-martingale part as separate sub-paths.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

ROLES = ("deterministic", "finite-variation", "local-martingale", "semimartingale")

SeedLike = Union[int, np.random.Generator, None]


class WrongIntegralKindError(TypeError):
    pass


# --------------------------------------------------------------------------
# random streams

def replica_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the stream identified by ``(seed, *key)``.

    Streams depend only on the key, so replicas can be drawn in any order or
    split across workers without changing a single bit.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def as_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return replica_rng(0 if seed is None else seed)


# --------------------------------------------------------------------------
# containers

@dataclass(frozen=True)
class MatrixPath:
    grid: np.ndarray
    values: np.ndarray  # (N+1, m, m)

    def __post_init__(self):
        object.__setattr__(self, "grid", np.asarray(self.grid, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        _check_grid(self.grid)
        if self.values.ndim != 3 or self.values.shape[0] != self.grid.size:
            raise ValueError("matrix path values must have shape (N+1, m, m)")


@dataclass(frozen=True)
class SampledPath:
    grid: np.ndarray
    values: np.ndarray  # (N+1, m)
    role: str = "deterministic"
    a_part: Optional["SampledPath"] = None
    m_part: Optional["SampledPath"] = None
    # predictable bracket <M, M> when known in closed form (e.g. scaled Brownian motion)
    bracket: Optional[MatrixPath] = field(default=None, compare=False)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        _check_grid(grid)
        if values.shape[0] != grid.size:
            raise ValueError("values and grid lengths differ")
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.role == "semimartingale" and self.a_part is not None and self.m_part is not None:
            gap = np.max(np.abs(self.a_part.values + self.m_part.values - values))
            if gap > 1e-12 * max(1.0, float(np.max(np.abs(values)))):
                raise ValueError("semimartingale decomposition does not add up")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    def with_values(self, values, role=None) -> "SampledPath":
        return SampledPath(self.grid, values, role or self.role)

    def at(self, t) -> np.ndarray:
        """Linear interpolation at time(s) t."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.stack([np.interp(t, self.grid, self.values[:, j]) for j in range(self.dim)], axis=-1)
        return out


def _check_grid(grid: np.ndarray) -> None:
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid needs at least two nodes")
    if not np.all(np.diff(grid) > 0):
        raise ValueError("grid must be strictly increasing")


def uniform_grid(T: float, h: float, t0: float = 0.0) -> np.ndarray:
    """Grid 0, h, 2h, ..., T; the last step is shortened if h does not divide T."""
    if T <= 0 or h <= 0:
        raise ValueError("T and h must be positive")
    n = int(np.floor(T / h + 1e-9))
    grid = t0 + h * np.arange(n + 1)
    if T - (grid[-1] - t0) > 1e-9 * h:
        grid = np.append(grid, t0 + T)
    else:
        grid[-1] = t0 + T
    return grid


def merge_grid(grid: np.ndarray, extra, tol: float = 1e-12) -> np.ndarray:
    """Union of grid nodes and extra times within [grid[0], grid[-1]]."""
    extra = np.asarray(extra, dtype=float)
    extra = extra[(extra > grid[0]) & (extra < grid[-1])]
    merged = np.union1d(grid, extra)
    keep = np.concatenate([[True], np.diff(merged) > tol])
    merged = merged[keep]
    merged[-1] = grid[-1]
    return merged


def path_from_function(fn, grid, role: str = "deterministic") -> SampledPath:
    grid = np.asarray(grid, dtype=float)
    values = np.array([np.atleast_1d(fn(t)) for t in grid], dtype=float)
    return SampledPath(grid, values, role)


# --------------------------------------------------------------------------
# Brownian motion

def brownian_increments(rng: np.random.Generator, grid: np.ndarray, m: int, eps: float) -> np.ndarray:
    dt = np.diff(grid)
    return np.sqrt(eps * dt)[:, None] * rng.standard_normal((dt.size, m))


def sample_brownian(m: int, grid, eps: float = 1.0, seed: SeedLike = 0) -> SampledPath:
    """sqrt(eps) times an m-dimensional standard Brownian motion on ``grid``."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    grid = np.asarray(grid, dtype=float)
    rng = as_rng(seed)
    inc = brownian_increments(rng, grid, m, eps)
    values = np.vstack([np.zeros((1, m)), np.cumsum(inc, axis=0)])
    return SampledPath(grid, values, "local-martingale",
                       bracket=scaled_identity_bracket(grid, m, eps))


def scaled_identity_bracket(grid, m: int, eps: float) -> MatrixPath:
    grid = np.asarray(grid, dtype=float)
    return MatrixPath(grid, eps * (grid - grid[0])[:, None, None] * np.eye(m))


# --------------------------------------------------------------------------
# variation

def _index_upto(grid: np.ndarray, t: float) -> int:
    if t > grid[-1] + 1e-12 * max(1.0, abs(grid[-1])) or t < grid[0]:
        raise ValueError(f"t={t} lies outside the grid [{grid[0]}, {grid[-1]}]")
    return int(np.searchsorted(grid, t, side="right") - 1)


def variation_process(p: SampledPath) -> np.ndarray:
    """Cumulative total variation V(p) at every node."""
    steps = np.linalg.norm(p.increments, axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def total_variation(p: SampledPath, t: Optional[float] = None) -> float:
    """Sum of |increments| up to time t (piecewise-linear interpolation inside a cell)."""
    V = variation_process(p)
    if t is None:
        return float(V[-1])
    k = _index_upto(p.grid, t)
    if k >= p.grid.size - 1:
        return float(V[-1])
    frac = (t - p.grid[k]) / (p.grid[k + 1] - p.grid[k])
    return float(V[k] + frac * (V[k + 1] - V[k]))


def _partition_indices(grid: np.ndarray, partition) -> np.ndarray:
    if partition is None:
        return np.arange(grid.size)
    partition = np.asarray(partition, dtype=float)
    # nearest node, so partitions built by floating-point arithmetic still match
    hi = np.clip(np.searchsorted(grid, partition), 1, grid.size - 1)
    idx = np.where(np.abs(grid[hi - 1] - partition) <= np.abs(grid[hi] - partition), hi - 1, hi)
    scale = 1e-9 * max(1.0, abs(grid[-1]))
    if np.any(np.abs(grid[idx] - partition) > scale):
        raise ValueError("partition times must be grid nodes")
    if np.any(np.diff(idx) <= 0):
        raise ValueError("partition must be strictly increasing")
    return idx


def covariation(p: SampledPath, q: SampledPath, partition=None) -> MatrixPath:
    """Partition sums of dp (x) dq, cumulative over the partition."""
    if p.grid.size != q.grid.size or np.any(p.grid != q.grid):
        raise ValueError("paths must share a grid")
    idx = _partition_indices(p.grid, partition)
    dp = np.diff(p.values[idx], axis=0)
    dq = np.diff(q.values[idx], axis=0)
    inc = dp[:, :, None] * dq[:, None, :]
    vals = np.concatenate([np.zeros((1,) + inc.shape[1:]), np.cumsum(inc, axis=0)])
    return MatrixPath(p.grid[idx], vals)


def quadratic_variation(p: SampledPath, partition=None) -> MatrixPath:
    qv = covariation(p, p, partition)
    sym = 0.5 * (qv.values + np.swapaxes(qv.values, 1, 2))
    return MatrixPath(qv.grid, sym)


def covariation_independence_check(R: int, grid, seed: int = 0, mode: str = "independent") -> float:
    """Mean |sum dX dW| over R replicas of 1-d Brownian pairs on ``grid``.

    ``mode`` selects independent pairs, identical paths (X = W) or a constant X.
    For independent pairs the mean is bounded by 3 sqrt(mesh * t).
    """
    if R < 100:
        raise ValueError("need at least 100 replicas")
    grid = np.asarray(grid, dtype=float)
    sums = np.empty(R)
    for r in range(R):
        rng = replica_rng(seed, r)
        dw = brownian_increments(rng, grid, 1, 1.0)[:, 0]
        if mode == "independent":
            dx = brownian_increments(rng, grid, 1, 1.0)[:, 0]
        elif mode == "identical":
            dx = dw
        elif mode == "constant":
            dx = np.zeros_like(dw)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        sums[r] = np.dot(dx, dw)
    return float(np.mean(np.abs(sums)))


def operator_norm_variation(Q: MatrixPath) -> np.ndarray:
    """Cumulative total variation of a matrix path in the operator (spectral) norm."""
    dQ = np.diff(Q.values, axis=0)
    sym = np.allclose(dQ, np.swapaxes(dQ, 1, 2), rtol=0, atol=1e-14)
    if sym:
        steps = np.max(np.abs(np.linalg.eigvalsh(dQ)), axis=1)
    else:
        steps = np.linalg.norm(dQ, ord=2, axis=(1, 2))
    return np.concatenate([[0.0], np.cumsum(steps)])


# --------------------------------------------------------------------------
# integrals

def _as_matrix_values(f, y: SampledPath) -> np.ndarray:
    if isinstance(f, SampledPath):
        if f.grid.size != y.grid.size or np.any(f.grid != y.grid):
            raise ValueError("integrand and integrator must share a grid")
        v = f.values
        if v.shape[1] == 1:
            return v[:, 0]
        return v
    arr = np.asarray(f, dtype=float)
    if arr.shape[0] != y.grid.size:
        raise ValueError("integrand must have one value per grid node")
    return arr


def _contract(fvals: np.ndarray, dy: np.ndarray) -> np.ndarray:
    if fvals.ndim == 1:
        return fvals[:, None] * dy
    if fvals.ndim == 2:
        # row-vector integrand: (N, n) . (N, n) -> scalar
        return np.sum(fvals * dy, axis=1, keepdims=True)
    return np.einsum("kij,kj->ki", fvals, dy)


def stieltjes_integral(f, y: SampledPath) -> SampledPath:
    """Left-point Riemann-Stieltjes sums of f against a finite-variation y.

    ``f`` is a SampledPath (scalar or row-vector values) or an array of
    shape (N+1,), (N+1, n) or (N+1, d, n) on y's grid.
    """
    if y.role in ("local-martingale", "semimartingale"):
        raise WrongIntegralKindError("integrator has a martingale part; use stratonovich_integral")
    fvals = _as_matrix_values(f, y)
    inc = _contract(fvals[:-1], y.increments)
    vals = np.vstack([np.zeros((1, inc.shape[1])), np.cumsum(inc, axis=0)])
    return SampledPath(y.grid, vals, "finite-variation")


def stratonovich_integral(f, y: SampledPath) -> SampledPath:
    """Midpoint sums sum 1/2 (f(t_i) + f(t_{i+1})) (y(t_{i+1}) - y(t_i))."""
    fvals = _as_matrix_values(f, y)
    mid = 0.5 * (fvals[:-1] + fvals[1:])
    inc = _contract(mid, y.increments)
    vals = np.vstack([np.zeros((1, inc.shape[1])), np.cumsum(inc, axis=0)])
    role = "finite-variation" if y.role in ("deterministic", "finite-variation") else "semimartingale"
    return SampledPath(y.grid, vals, role)


# --------------------------------------------------------------------------
# path statistics

def _upto(p: SampledPath, T: Optional[float]) -> np.ndarray:
    if T is None:
        return p.values
    k = _index_upto(p.grid, T)
    return p.values[: k + 1]


def sup_norm(p: SampledPath, T: Optional[float] = None) -> float:
    vals = _upto(p, T)
    return float(np.max(np.linalg.norm(vals, axis=1)))


def modulus_of_continuity(p: SampledPath, T: Optional[float], rho: float) -> float:
    """sup |p(t) - p(s)| over grid nodes with |t - s| <= rho, s, t <= T."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    vals = _upto(p, T)
    grid = p.grid[: vals.shape[0]]
    return float(batch_modulus(grid, vals[None], rho)[0])


def batch_sup_norm(values: np.ndarray) -> np.ndarray:
    """Sup norms of a stack of paths, values shape (R, N+1, m)."""
    return np.max(np.linalg.norm(values, axis=-1), axis=-1)


def batch_modulus(grid: np.ndarray, values: np.ndarray, rho: float) -> np.ndarray:
    if rho <= 0:
        raise ValueError("rho must be positive")
    tol = 1e-12 * max(1.0, abs(grid[-1]))
    reach = np.searchsorted(grid, grid + rho + tol, side="right") - 1
    max_lag = int(np.max(reach - np.arange(grid.size)))
    out = np.zeros(values.shape[0])
    for lag in range(1, max_lag + 1):
        ok = (np.arange(grid.size - lag) + lag) <= reach[: grid.size - lag]
        if not np.any(ok):
            continue
        diff = np.linalg.norm(values[:, lag:] - values[:, :-lag], axis=-1)[:, ok]
        out = np.maximum(out, np.max(diff, axis=1))
    return out


def g_process(y: SampledPath, eps: float) -> SampledPath:
    """Increasing process |V(A)|_t + (1/eps) |<M, M>|_t of a decomposed semimartingale.

    |<M, M>| is the total variation of the bracket in the operator norm. The
    closed-form bracket attached to the martingale part is used when present;
    otherwise the partition-sum quadratic variation on the grid.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if y.role in ("deterministic", "finite-variation"):
        return SampledPath(y.grid, variation_process(y), "finite-variation")
    if y.a_part is None or y.m_part is None:
        raise ValueError("g_process needs the semimartingale decomposition")
    va = variation_process(y.a_part)
    bracket = y.m_part.bracket
    if bracket is None:
        bracket = quadratic_variation(y.m_part)
    vm = operator_norm_variation(bracket)
    return SampledPath(y.grid, va + vm / eps, "finite-variation")
