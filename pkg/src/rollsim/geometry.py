"""Riemannian manifold backends.

Four built-in spaces are supported, each with closed-form Levi-Civita data:

* ``flat``       Euclidean R^d in standard coordinates.
* ``sphere``     the unit sphere S^d embedded in R^(d+1) (extrinsic backend).
* ``hyperbolic`` the upper half-plane model of H^2, metric (dx^2 + dy^2) / y^2.
* ``torus``      the flat torus R^d / (period Z)^d, coordinates wrapped.

A ``chart`` backend takes user callables for the metric and the Christoffel
symbols. Frames are stored column-wise: column k holds the coordinate (or
ambient) components of the k-th frame vector.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

KINDS = ("flat", "sphere", "hyperbolic", "torus", "chart")


class DomainError(ValueError):
    """A point (or an integration step) left the backend's valid domain."""

    def __init__(self, message: str, time: Optional[float] = None):
        if time is not None:
            message = f"{message} (at t={time!r})"
        super().__init__(message)
        self.time = time


class UnsupportedBackendError(NotImplementedError):
    pass


class DegenerateFrameError(ValueError):
    pass


@dataclass(frozen=True)
class ManifoldSpec:
    kind: str
    dim: int
    metric: Optional[Callable[[np.ndarray], np.ndarray]] = None
    christoffel: Optional[Callable[[np.ndarray], np.ndarray]] = None
    period: float = 2 * np.pi
    domain: Optional[Callable[[np.ndarray], np.ndarray]] = None  # chart only: (..., d) -> bool mask

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        if self.kind == "hyperbolic" and self.dim != 2:
            raise ValueError("the half-plane backend is two-dimensional")
        if self.kind == "chart" and (self.metric is None or self.christoffel is None):
            raise ValueError("chart backend needs metric and christoffel callables")

    @property
    def ambient_dim(self) -> int:
        return self.dim + 1 if self.kind == "sphere" else self.dim

    @property
    def extrinsic(self) -> bool:
        return self.kind == "sphere"

    def to_json(self) -> dict:
        if self.kind == "chart":
            raise TypeError("chart callables are not serializable")
        out = {"kind": self.kind, "dim": self.dim}
        if self.kind == "torus":
            out["period"] = self.period
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ManifoldSpec":
        kind = obj["kind"]
        if kind == "chart":
            raise TypeError("chart backends are only constructible programmatically")
        if kind == "hyperbolic":
            return cls("hyperbolic", int(obj.get("dim", 2)))
        if kind == "torus":
            return cls("torus", int(obj["dim"]), period=float(obj.get("period", 2 * np.pi)))
        return cls(kind, int(obj["dim"]))


def flat(d: int) -> ManifoldSpec:
    return ManifoldSpec("flat", d)


def sphere(d: int = 2) -> ManifoldSpec:
    """Unit sphere S^d in R^(d+1)."""
    return ManifoldSpec("sphere", d)


def hyperbolic() -> ManifoldSpec:
    return ManifoldSpec("hyperbolic", 2)


def torus(d: int, period: float = 2 * np.pi) -> ManifoldSpec:
    return ManifoldSpec("torus", d, period=period)


def chart(d: int, metric, christoffel, domain=None) -> ManifoldSpec:
    return ManifoldSpec("chart", d, metric=metric, christoffel=christoffel, domain=domain)


def half_plane_chart() -> ManifoldSpec:
    """The half-plane expressed through the generic chart backend (no closed forms)."""
    return chart(2, _half_plane_metric, _half_plane_christoffel, lambda x: x[..., 1] > 0)


@dataclass(frozen=True)
class OrthonormalFrame:
    base: np.ndarray
    frame: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float))
        object.__setattr__(self, "frame", np.asarray(self.frame, dtype=float))


# --------------------------------------------------------------------------
# closed-form data

def _half_plane_metric(x):
    y = x[1]
    return np.eye(2) / (y * y)


def _half_plane_christoffel(x):
    y = x[1]
    gam = np.zeros((2, 2, 2))
    gam[0, 0, 1] = gam[0, 1, 0] = -1.0 / y
    gam[1, 0, 0] = 1.0 / y
    gam[1, 1, 1] = -1.0 / y
    return gam


def check_domain(M: ManifoldSpec, x, time: Optional[float] = None) -> None:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != M.ambient_dim:
        raise DomainError(f"expected {M.ambient_dim} coordinates, got {x.shape[-1]}", time)
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite coordinates", time)
    if M.kind == "hyperbolic" and np.any(x[..., 1] <= 0):
        raise DomainError("half-plane point with y <= 0", time)
    if M.kind == "sphere" and np.any(np.abs(np.linalg.norm(x, axis=-1) - 1) > 1e-9):
        raise DomainError("point is not on the unit sphere", time)
    if M.domain is not None and not np.all(M.domain(x)):
        raise DomainError("point outside the chart domain", time)


def metric_at(M: ManifoldSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if M.kind == "sphere":
        raise UnsupportedBackendError(
            "the embedded sphere uses the ambient inner product restricted to tangent vectors")
    check_domain(M, x)
    if M.kind in ("flat", "torus"):
        return np.eye(M.dim)
    if M.kind == "hyperbolic":
        return _half_plane_metric(x)
    return np.asarray(M.metric(x), dtype=float)


def christoffel_at(M: ManifoldSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if M.kind == "sphere":
        raise UnsupportedBackendError("Christoffel symbols are not defined on the extrinsic sphere backend")
    check_domain(M, x)
    if M.kind in ("flat", "torus"):
        return np.zeros((M.dim,) * 3)
    if M.kind == "hyperbolic":
        return _half_plane_christoffel(x)
    return np.asarray(M.christoffel(x), dtype=float)


def christoffel_batch(M: ManifoldSpec, x: np.ndarray) -> Optional[np.ndarray]:
    """Christoffel symbols for a stack of points, shape (..., d, d, d). None means zero."""
    if M.kind in ("flat", "torus"):
        return None
    if M.kind == "hyperbolic":
        inv = 1.0 / x[..., 1]
        gam = np.zeros(x.shape[:-1] + (2, 2, 2))
        gam[..., 0, 0, 1] = -inv
        gam[..., 0, 1, 0] = -inv
        gam[..., 1, 0, 0] = inv
        gam[..., 1, 1, 1] = -inv
        return gam
    if M.kind == "chart":
        flat_x = x.reshape(-1, M.dim)
        out = np.stack([np.asarray(M.christoffel(p), dtype=float) for p in flat_x])
        return out.reshape(x.shape[:-1] + (M.dim,) * 3)
    raise UnsupportedBackendError(M.kind)


def metric_batch(M: ManifoldSpec, x: np.ndarray) -> np.ndarray:
    if M.kind == "sphere":
        raise UnsupportedBackendError("sphere")
    if M.kind in ("flat", "torus"):
        return np.broadcast_to(np.eye(M.dim), x.shape[:-1] + (M.dim, M.dim))
    if M.kind == "hyperbolic":
        return np.eye(2) / (x[..., 1] ** 2)[..., None, None]
    flat_x = x.reshape(-1, M.dim)
    out = np.stack([np.asarray(M.metric(p), dtype=float) for p in flat_x])
    return out.reshape(x.shape[:-1] + (M.dim, M.dim))


def christoffel_audit(M: ManifoldSpec, x, step: float = 1e-5, tol: float = 1e-4) -> float:
    """Max discrepancy between the supplied Christoffels and those derived from the metric.

    Metric derivatives come from central differences. Raises ValueError when the
    discrepancy exceeds ``tol``.
    """
    x = np.asarray(x, dtype=float)
    d = M.dim
    g = metric_at(M, x)
    ginv = np.linalg.inv(g)
    dg = np.empty((d, d, d))  # dg[l, i, j] = d_l g_ij
    for l in range(d):
        e = np.zeros(d)
        e[l] = step
        dg[l] = (metric_at(M, x + e) - metric_at(M, x - e)) / (2 * step)
    # Gamma^i_jk = 1/2 g^il (d_j g_lk + d_k g_lj - d_l g_jk)
    term = dg.transpose(1, 0, 2) + dg.transpose(1, 2, 0) - dg
    derived = 0.5 * np.einsum("il,ljk->ijk", ginv, term)
    err = float(np.max(np.abs(derived - christoffel_at(M, x))))
    if err > tol:
        raise ValueError(f"metric and Christoffel symbols disagree by {err:.3e}")
    return err


# --------------------------------------------------------------------------
# geodesics and distance

def wrap(M: ManifoldSpec, x: np.ndarray) -> np.ndarray:
    if M.kind != "torus":
        return x
    return np.mod(x, M.period)


def minimal_image(M: ManifoldSpec, dx: np.ndarray) -> np.ndarray:
    if M.kind != "torus":
        return dx
    p = M.period
    return dx - p * np.round(dx / p)


def _geodesic_rhs(M, state):
    d = M.dim
    x, v = state[:d], state[d:]
    gam = christoffel_at(M, x)
    acc = -np.einsum("ijk,j,k->i", gam, v, v)
    return np.concatenate([v, acc])


def _geodesic_rk4(M, x0, v0, t, h):
    n = max(1, int(np.ceil(abs(t) / h - 1e-9)))
    dt = t / n
    s = np.concatenate([x0, v0])
    for _ in range(n):
        k1 = _geodesic_rhs(M, s)
        k2 = _geodesic_rhs(M, s + 0.5 * dt * k1)
        k3 = _geodesic_rhs(M, s + 0.5 * dt * k2)
        k4 = _geodesic_rhs(M, s + dt * k3)
        s = s + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return s[:M.dim]


def geodesic(M: ManifoldSpec, x0, v0, t: float, h: float = 1e-3) -> np.ndarray:
    """Point reached at time ``t`` by the geodesic with initial velocity ``v0``.

    Closed forms for the built-in backends; RK4 on the geodesic equation with
    step ``h`` for chart backends.
    """
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    check_domain(M, x0)
    if M.kind == "flat":
        return x0 + t * v0
    if M.kind == "torus":
        return wrap(M, x0 + t * v0)
    if M.kind == "sphere":
        v = v0 - np.dot(v0, x0) * x0
        speed = np.linalg.norm(v)
        if speed == 0:
            return x0.copy()
        return np.cos(speed * t) * x0 + np.sin(speed * t) * v / speed
    if M.kind == "hyperbolic":
        return _half_plane_geodesic(x0, v0, t)
    return _geodesic_rk4(M, x0, v0, t, h)


def _half_plane_geodesic(x0, v0, t):
    a, b = x0
    vx, vy = v0
    speed = np.hypot(vx, vy) / b
    if speed == 0:
        return x0.copy()
    if vx == 0:
        return np.array([a, b * np.exp(np.sign(vy) * speed * t)])
    c = a + b * vy / vx
    r = np.hypot(a - c, b)
    sigma = np.arctanh((a - c) / r) + np.sign(vx) * speed * t
    return np.array([c + r * np.tanh(sigma), r / np.cosh(sigma)])


def distance(M: ManifoldSpec, x1, x2) -> float:
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    return float(distance_batch(M, x1, x2))


def distance_batch(M: ManifoldSpec, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Riemannian distance along the last axis; broadcasts over leading axes."""
    if M.kind == "flat":
        return np.linalg.norm(x1 - x2, axis=-1)
    if M.kind == "torus":
        return np.linalg.norm(minimal_image(M, x1 - x2), axis=-1)
    if M.kind == "sphere":
        # atan2 form stays accurate for nearby and antipodal points alike
        cross = np.linalg.norm(x1 - x2, axis=-1)
        summ = np.linalg.norm(x1 + x2, axis=-1)
        return 2.0 * np.arctan2(cross, summ)
    if M.kind == "hyperbolic":
        num = np.sum((x1 - x2) ** 2, axis=-1)
        arg = num / (2.0 * x1[..., 1] * x2[..., 1])
        # arccosh(1 + u) written to keep precision for small u
        return np.log1p(arg + np.sqrt(arg * (arg + 2.0)))
    raise UnsupportedBackendError("no closed-form distance on chart backends; use trace_length")


# --------------------------------------------------------------------------
# frames

def _inv_sqrt_spd(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(S)
    return (V / np.sqrt(w)[..., None, :]) @ np.swapaxes(V, -1, -2)


def frame_gram(M: ManifoldSpec, x: np.ndarray, E: np.ndarray) -> np.ndarray:
    """E^T G E for a stack of frames."""
    if M.kind == "sphere":
        return np.swapaxes(E, -1, -2) @ E
    if M.kind in ("flat", "torus"):
        return np.swapaxes(E, -1, -2) @ E
    G = metric_batch(M, x)
    return np.swapaxes(E, -1, -2) @ G @ E


def frame_defect(M: ManifoldSpec, x: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Orthonormality defect max|E^T G E - I| (plus normal leakage on the sphere)."""
    gram = frame_gram(M, x, E)
    defect = np.max(np.abs(gram - np.eye(M.dim)), axis=(-1, -2))
    if M.kind == "sphere":
        leak = np.max(np.abs(np.einsum("...i,...ij->...j", x, E)), axis=-1)
        defect = np.maximum(defect, leak)
        defect = np.maximum(defect, np.abs(np.sum(x * x, axis=-1) - 1.0))
    return defect


def polar_orthonormalize(M: ManifoldSpec, x: np.ndarray, E: np.ndarray):
    """Nearest orthonormal frame in the metric: E (E^T G E)^(-1/2).

    On the sphere the base is renormalized and the columns projected onto the
    tangent space first.
    """
    if M.kind == "sphere":
        x = x / np.linalg.norm(x, axis=-1, keepdims=True)
        E = E - x[..., :, None] * np.einsum("...i,...ij->...j", x, E)[..., None, :]
    return x, E @ _inv_sqrt_spd(frame_gram(M, x, E))


def gram_schmidt_frame(M: ManifoldSpec, x, vectors=None) -> OrthonormalFrame:
    """Orthonormalize the columns of ``vectors`` in the metric at ``x``.

    ``vectors`` defaults to the coordinate basis (on the sphere, the ambient
    basis vectors projected to the tangent space, skipping the one closest to
    the normal direction).
    """
    x = np.asarray(x, dtype=float)
    check_domain(M, x)
    d = M.dim
    if vectors is None:
        if M.kind == "sphere":
            drop = int(np.argmax(np.abs(x)))
            vectors = np.delete(np.eye(d + 1), drop, axis=1)
        else:
            vectors = np.eye(d)
    V = np.array(vectors, dtype=float)
    if V.shape != (M.ambient_dim, d):
        raise ValueError(f"expected a {M.ambient_dim}x{d} matrix of column vectors")
    if M.kind == "sphere":
        V = V - np.outer(x, x @ V)
        G = np.eye(d + 1)
    else:
        G = metric_at(M, x)
    scale = max(1.0, float(np.max(np.abs(V))))
    out = np.zeros_like(V)
    for k in range(d):
        v = V[:, k].copy()
        for _ in range(2):  # second pass removes residual projections
            for j in range(k):
                v -= (out[:, j] @ G @ v) * out[:, j]
        nrm = np.sqrt(v @ G @ v)
        if not np.isfinite(nrm) or nrm < 1e-10 * scale:
            raise DegenerateFrameError("input vectors are linearly dependent (or normal to the sphere)")
        out[:, k] = v / nrm
    return OrthonormalFrame(x.copy(), out)


def default_frame(M: ManifoldSpec, base=None) -> OrthonormalFrame:
    """Standard initial frame: identity-derived at a canonical base point."""
    if base is None:
        if M.kind == "sphere":
            base = np.zeros(M.dim + 1)
            base[-1] = 1.0
        elif M.kind == "hyperbolic":
            base = np.array([0.0, 1.0])
        else:
            base = np.zeros(M.dim)
    base = wrap(M, np.asarray(base, dtype=float))
    return gram_schmidt_frame(M, base)
