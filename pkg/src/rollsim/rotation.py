"""Skew-symmetric bases and an SO(d)-preserving integrator for the twisting process."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
import scipy.linalg

from .paths import SampledPath


class NotSkewError(ValueError):
    pass


@dataclass(frozen=True)
class SkewBasis:
    """Basis a_i^j = e_i e_j^T - e_j e_i^T of so(d), i < j in lexicographic order.

    The matrices are orthonormal for the inner product <A, B> = tr(A^T B) / 2.
    """
    dim: int
    matrices: np.ndarray  # (D, d, d)
    pairs: tuple

    @property
    def size(self) -> int:
        return self.matrices.shape[0]

    def combine(self, coeffs: np.ndarray) -> np.ndarray:
        """sum_alpha coeffs[..., alpha] A_alpha."""
        return np.tensordot(coeffs, self.matrices, axes=([-1], [0]))

    def coordinates(self, A: np.ndarray) -> np.ndarray:
        """Inverse of ``combine`` for skew A (reads the upper triangle)."""
        i, j = np.array(self.pairs).T
        return A[..., i, j]


def so_basis(d: int) -> SkewBasis:
    if d < 2:
        raise ValueError("so(d) needs d >= 2")
    pairs = tuple(combinations(range(d), 2))
    mats = np.zeros((len(pairs), d, d))
    for k, (i, j) in enumerate(pairs):
        mats[k, i, j] = 1.0
        mats[k, j, i] = -1.0
    return SkewBasis(d, mats, pairs)


def _check_skew(A: np.ndarray, tol: float = 1e-12) -> None:
    if A.shape[-1] != A.shape[-2]:
        raise NotSkewError("matrix must be square")
    if np.max(np.abs(A + np.swapaxes(A, -1, -2)), initial=0.0) > tol:
        raise NotSkewError("matrix is not skew-symmetric")


def skew_expm(A) -> np.ndarray:
    """Matrix exponential of a skew matrix (or a stack of them).

    Closed forms for d = 2 (planar rotation) and d = 3 (Rodrigues); Pade
    scaling-and-squaring for larger d.
    """
    A = np.asarray(A, dtype=float)
    _check_skew(A)
    d = A.shape[-1]
    if d == 2:
        theta = A[..., 0, 1]
        c, s = np.cos(theta), np.sin(theta)
        out = np.empty(A.shape)
        out[..., 0, 0] = c
        out[..., 0, 1] = s
        out[..., 1, 0] = -s
        out[..., 1, 1] = c
        return out
    if d == 3:
        return _rodrigues(A)
    if A.ndim == 2:
        return scipy.linalg.expm(A)
    flat = A.reshape(-1, d, d)
    return np.stack([scipy.linalg.expm(a) for a in flat]).reshape(A.shape)


def _rodrigues(A: np.ndarray) -> np.ndarray:
    w = np.stack([A[..., 2, 1], A[..., 0, 2], A[..., 1, 0]], axis=-1)
    th2 = np.sum(w * w, axis=-1)
    th = np.sqrt(th2)
    small = th2 < 1e-8
    safe = np.where(small, 1.0, th)
    # series for sin(t)/t and (1 - cos t)/t^2 below the cutoff
    a = np.where(small, 1 - th2 / 6 + th2 * th2 / 120, np.sin(safe) / safe)
    b = np.where(small, 0.5 - th2 / 24 + th2 * th2 / 720, (1 - np.cos(safe)) / (safe * safe))
    A2 = A @ A
    return np.eye(3) + a[..., None, None] * A + b[..., None, None] * A2


def skew_logm(g) -> np.ndarray:
    """Principal logarithm of a rotation (rotation angle below pi), skew result."""
    g = np.asarray(g, dtype=float)
    d = g.shape[-1]
    if d == 2:
        theta = np.arctan2(g[..., 0, 1], g[..., 0, 0])
        out = np.zeros(g.shape)
        out[..., 0, 1] = theta
        out[..., 1, 0] = -theta
        return out
    if d == 3:
        skew = 0.5 * (g - np.swapaxes(g, -1, -2))
        w = np.stack([skew[..., 2, 1], skew[..., 0, 2], skew[..., 1, 0]], axis=-1)
        s = np.linalg.norm(w, axis=-1)
        c = 0.5 * (np.trace(g, axis1=-2, axis2=-1) - 1.0)
        th = np.arctan2(s, c)
        small = s < 1e-8
        factor = np.where(small, 1 + th * th / 6, th / np.where(small, 1.0, s))
        return skew * factor[..., None, None]
    if g.ndim == 2:
        L = np.real(scipy.linalg.logm(g))
        return 0.5 * (L - L.T)
    flat = g.reshape(-1, d, d)
    return np.stack([skew_logm(x) for x in flat]).reshape(g.shape)


def orthogonality_defect(g: np.ndarray) -> np.ndarray:
    d = g.shape[-1]
    return np.max(np.abs(np.swapaxes(g, -1, -2) @ g - np.eye(d)), axis=(-1, -2))


def project_so(g: np.ndarray) -> np.ndarray:
    """Nearest rotation via the polar factor."""
    U, _, Vt = np.linalg.svd(g)
    return U @ Vt


@dataclass(frozen=True)
class RotationPath:
    grid: np.ndarray
    values: np.ndarray  # (N+1, d, d)

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    def max_defect(self) -> float:
        return float(np.max(orthogonality_defect(self.values)))

    def determinants(self) -> np.ndarray:
        return np.linalg.det(self.values)


def rotation_steps(increments: np.ndarray, basis: SkewBasis) -> np.ndarray:
    """Per-step factors expm(sum_alpha A_alpha dW^alpha); increments (..., D)."""
    return skew_expm(basis.combine(increments))


def integrate_rotation(driver: SampledPath, basis: SkewBasis, reorth_tol: float = 1e-13) -> RotationPath:
    """Geometric Euler scheme g_{k+1} = g_k expm(sum A_alpha d driver^alpha), g_0 = I."""
    if driver.dim != basis.size:
        raise ValueError(f"driver has {driver.dim} components, basis has {basis.size}")
    d = basis.dim
    if d == 2:
        # SO(2) is abelian: the product of step factors is the exponential of the summed angle
        angle = driver.values - driver.values[0]
        return RotationPath(driver.grid, skew_expm(basis.combine(angle)))
    steps = rotation_steps(driver.increments, basis)
    out = np.empty((driver.grid.size, d, d))
    g = np.eye(d)
    out[0] = g
    for k, s in enumerate(steps):
        g = g @ s
        if orthogonality_defect(g) > reorth_tol:
            g = project_so(g)
        out[k + 1] = g
    return RotationPath(driver.grid, out)


def antiintegrate_rotation(g: RotationPath, basis: SkewBasis) -> SampledPath:
    """Driver whose geometric Euler integration reproduces ``g`` (steps below pi)."""
    rel = np.swapaxes(g.values[:-1], -1, -2) @ g.values[1:]
    inc = basis.coordinates(skew_logm(rel))
    vals = np.vstack([np.zeros((1, basis.size)), np.cumsum(inc, axis=0)])
    return SampledPath(g.grid, vals, "deterministic")
