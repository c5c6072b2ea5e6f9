"""Randomly perturbed Euclidean curves: slipping schedules and curve constructions.

A slipping schedule is a realization of a compound Poisson subordinator on
[0, T]: jump times tau_k with i.i.d. Exponential(lambda) gaps and durations
e_k drawn from the jump law. Slip intervals are [tau_k, tau_k + e_k); when
two of them overlap the slip simply continues until the later one ends, so
curve constructions work with the merged union of the intervals.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .paths import SampledPath, SeedLike, as_rng, merge_grid, scaled_identity_bracket

LOG_RATE_CAP = 700.0   # lambda(eps) <= exp(700)
MAX_EXPECTED_JUMPS = 1e7


class SaturationError(OverflowError):
    """The jump rate is too large to simulate at this eps."""

    def __init__(self, message: str, eps_floor: Optional[float] = None):
        super().__init__(message)
        self.eps_floor = eps_floor


class NonIntegrableError(ValueError):
    pass


class BoundViolationError(AssertionError):
    """A pathwise deviation or variation bound failed for a generated sample."""


# --------------------------------------------------------------------------
# base curves and drift fields

@dataclass(frozen=True)
class BaseCurve:
    """Differentiable curve with |velocity| <= speed_bound.

    ``position`` and ``velocity`` map an array of times (n,) to (n, d).
    """
    name: str
    position: Callable
    velocity: Callable
    speed_bound: float
    lipschitz: Optional[float] = None
    arclength: Optional[Callable] = None  # t -> V(gamma)_t

    def __call__(self, t):
        return self.position(np.atleast_1d(np.asarray(t, dtype=float)))

    @property
    def dim(self) -> int:
        return int(self.position(np.zeros(1)).shape[-1])

    def sample(self, grid) -> SampledPath:
        grid = np.asarray(grid, dtype=float)
        return SampledPath(grid, self.position(grid), "deterministic")

    def variation(self, t: float) -> float:
        if self.arclength is not None:
            return float(self.arclength(t))
        val, _ = integrate.quad(lambda s: np.linalg.norm(self.velocity(np.array([s]))[0]), 0.0, t, limit=200)
        return float(val)

    def audit(self, T: float, n: int = 2001) -> float:
        """Largest sampled speed on [0, T]; raises if it exceeds the bound."""
        t = np.linspace(0.0, T, n)
        top = float(np.max(np.linalg.norm(self.velocity(t), axis=1)))
        if top > self.speed_bound * (1 + 1e-12):
            raise ValueError(f"speed {top} exceeds the bound {self.speed_bound}")
        return top


def line(direction=(1.0, 0.0), speed: float = 1.0, start=None) -> BaseCurve:
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    p0 = np.zeros_like(u) if start is None else np.asarray(start, dtype=float)
    v = speed * u
    return BaseCurve(
        "line",
        lambda t: p0 + np.asarray(t)[..., None] * v,
        lambda t: np.broadcast_to(v, np.shape(t) + v.shape).copy(),
        abs(speed), 0.0, lambda t: abs(speed) * t,
    )


def circle(radius: float = 1.0, speed: float = 1.0) -> BaseCurve:
    """Counter-clockwise circle through the origin, centred at (0, radius)."""
    w = speed / radius

    def pos(t):
        t = np.asarray(t)
        return np.stack([radius * np.sin(w * t), radius * (1 - np.cos(w * t))], axis=-1)

    def vel(t):
        t = np.asarray(t)
        return np.stack([speed * np.cos(w * t), speed * np.sin(w * t)], axis=-1)

    return BaseCurve("circle", pos, vel, abs(speed), speed * speed / radius, lambda t: abs(speed) * t)


def lissajous(a: float = 1.0, b: float = 2.0, amp=(1.0, 0.5)) -> BaseCurve:
    """(A sin(a t), B sin(b t)); starts at the origin."""
    A, B = amp

    def pos(t):
        t = np.asarray(t)
        return np.stack([A * np.sin(a * t), B * np.sin(b * t)], axis=-1)

    def vel(t):
        t = np.asarray(t)
        return np.stack([A * a * np.cos(a * t), B * b * np.cos(b * t)], axis=-1)

    return BaseCurve("lissajous", pos, vel, float(np.hypot(A * a, B * b)),
                     float(np.hypot(A * a * a, B * b * b)))


def curve_from_samples(grid, values, name: str = "samples") -> BaseCurve:
    """Piecewise-linear curve through tabulated points (e.g. read from CSV)."""
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    slopes = np.diff(values, axis=0) / np.diff(grid)[:, None]

    def pos(t):
        t = np.asarray(t, dtype=float)
        return np.stack([np.interp(t, grid, values[:, j]) for j in range(values.shape[1])], axis=-1)

    def vel(t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(grid, t, side="right") - 1, 0, slopes.shape[0] - 1)
        return slopes[k]

    length = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(values, axis=0), axis=1))])
    return BaseCurve(name, pos, vel, float(np.max(np.linalg.norm(slopes, axis=1))), None,
                     lambda t: float(np.interp(t, grid, length)))


@dataclass(frozen=True)
class DriftField:
    """b(t, x) with x of shape (..., d); bound and Lipschitz constant C."""
    fn: Callable
    bound: float
    lipschitz: float
    vectorized: bool = False  # fn accepts times (n,) with points (n, d)

    def __call__(self, t, x):
        return self.fn(t, x)

    def along(self, ts, xs) -> np.ndarray:
        """b(t_i, x_i) for every node."""
        ts = np.asarray(ts, dtype=float)
        xs = np.asarray(xs, dtype=float)
        if self.vectorized:
            return np.asarray(self.fn(ts, xs), dtype=float)
        return np.array([np.asarray(self.fn(t, x), dtype=float) for t, x in zip(ts, xs)])

    def audit(self, ts, xs) -> float:
        top = float(np.max([np.max(np.linalg.norm(self.fn(t, xs), axis=-1)) for t in ts]))
        if top > self.bound * (1 + 1e-12):
            raise ValueError(f"|b| = {top} exceeds the bound {self.bound}")
        return top


def curve_drift(curve: BaseCurve) -> DriftField:
    """b(t, x) = velocity of the curve at t, independent of x."""
    def fn(t, x):
        x = np.asarray(x, dtype=float)
        v = curve.velocity(np.atleast_1d(np.asarray(t, dtype=float)))
        return np.broadcast_to(v if np.ndim(t) else v[0], x.shape)
    return DriftField(fn, curve.speed_bound, 0.0, vectorized=True)


def linear_drift(A, c=None, bound: float = np.inf) -> DriftField:
    """b(t, x) = A x + c."""
    A = np.asarray(A, dtype=float)
    c = np.zeros(A.shape[0]) if c is None else np.asarray(c, dtype=float)
    return DriftField(lambda t, x: np.asarray(x) @ A.T + c, bound, float(np.linalg.norm(A, 2)), vectorized=True)


# --------------------------------------------------------------------------
# jump measures

@dataclass(frozen=True)
class JumpMeasureSpec:
    """Finite jump measure nu^eps on (0, inf), given by its total mass and jump law.

    log_rate(eps)      log lambda(eps) = log nu^eps((0, inf))
    sampler(u, eps)    inverse CDF of mu^eps = nu^eps / lambda(eps)
    log_mean_jump(eps) log of int x nu^eps(dx), or None
    density(x, eps)    nu^eps(dx)/dx, used for quadrature
    """
    name: str
    log_rate: Callable
    sampler: Callable
    log_mean_jump: Optional[Callable] = None
    density: Optional[Callable] = None
    scale: Optional[Callable] = None  # typical jump size, guides quadrature

    def rate(self, eps: float) -> float:
        lr = self.log_rate(eps)
        if lr > LOG_RATE_CAP:
            raise SaturationError(f"lambda({eps}) = exp({lr:.4g}) overflows")
        return float(np.exp(lr))

    def mean_jump(self, eps: float) -> float:
        return float(np.exp(self.log_mean_jump(eps)))


def scaled_exponential(name: str, log_kappa: Callable) -> JumpMeasureSpec:
    """nu^eps(dx) = exp(-x kappa(eps)) dx with kappa = exp(log_kappa(eps)).

    lambda = 1/kappa, jumps ~ Exponential(kappa), int x nu = 1/kappa^2.
    """
    return JumpMeasureSpec(
        name,
        log_rate=lambda eps: -log_kappa(eps),
        sampler=lambda u, eps: -np.log1p(-np.asarray(u)) * np.exp(-log_kappa(eps)),
        log_mean_jump=lambda eps: -2.0 * log_kappa(eps),
        density=lambda x, eps: np.exp(-np.asarray(x) * np.exp(log_kappa(eps))),
        scale=lambda eps: np.exp(-log_kappa(eps)),
    )


def vanishing_mean_measure() -> JumpMeasureSpec:
    """exp(-x exp(eps^-1.1)) dx: rare, tiny jumps; the mean jump dies faster than any exp(-c/eps)."""
    return scaled_exponential("vanishing-mean", lambda eps: eps ** -1.1)


def exploding_rate_measure() -> JumpMeasureSpec:
    """exp(-x exp(-eps^-1.1)) dx: lambda = exp(eps^-1.1), so eps * lambda diverges."""
    return scaled_exponential("exploding-rate", lambda eps: -(eps ** -1.1))


def exponential_measure(c: float) -> JumpMeasureSpec:
    """eps-independent exp(-c x) dx."""
    return scaled_exponential(f"exponential({c:g})", lambda eps: float(np.log(c)))


def rate_family(name: str, rate: Callable, mean_size: float = 1.0) -> JumpMeasureSpec:
    """lambda(eps) given directly, exponential jumps of mean ``mean_size``."""
    return JumpMeasureSpec(
        name,
        log_rate=lambda eps: float(np.log(rate(eps))),
        sampler=lambda u, eps: -np.log1p(-np.asarray(u)) * mean_size,
        log_mean_jump=lambda eps: float(np.log(rate(eps) * mean_size)),
        density=lambda x, eps: rate(eps) / mean_size * np.exp(-np.asarray(x) / mean_size),
        scale=lambda eps: mean_size,
    )


MEASURES = {
    "vanishing-mean": vanishing_mean_measure,
    "exploding-rate": exploding_rate_measure,
}


def saturation_floor(spec: JumpMeasureSpec, lo: float = 1e-4, hi: float = 10.0) -> Optional[float]:
    """Smallest eps with log lambda(eps) <= LOG_RATE_CAP (bisection), None if never saturated."""
    if spec.log_rate(lo) <= LOG_RATE_CAP:
        return None
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if spec.log_rate(mid) > LOG_RATE_CAP:
            lo = mid
        else:
            hi = mid
    return hi


# --------------------------------------------------------------------------
# schedules

@dataclass(frozen=True)
class SlippingSchedule:
    times: np.ndarray
    durations: np.ndarray
    horizon: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        e = np.asarray(self.durations, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "durations", e)
        if t.shape != e.shape or t.ndim != 1:
            raise ValueError("times and durations must be 1-d of equal length")
        if t.size and (np.any(np.diff(t) <= 0) or t[0] < 0 or t[-1] > self.horizon):
            raise ValueError("jump times must be strictly increasing within [0, T]")
        if np.any(e <= 0):
            raise ValueError("durations must be positive")

    def __len__(self) -> int:
        return self.times.size

    def subordinator(self, t) -> np.ndarray:
        """S_t = sum of durations of jumps at times <= t."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        cum = np.concatenate([[0.0], np.cumsum(self.durations)])
        return cum[np.searchsorted(self.times, t, side="right")]

    @property
    def total(self) -> float:
        return float(np.sum(self.durations))

    def intervals(self) -> np.ndarray:
        """Merged slip intervals [a, b) as an (m, 2) array; b may exceed T."""
        if not len(self):
            return np.zeros((0, 2))
        out = []
        a, b = self.times[0], self.times[0] + self.durations[0]
        for t, e in zip(self.times[1:], self.durations[1:]):
            if t < b:
                b = max(b, t + e)
            else:
                out.append((a, b))
                a, b = t, t + e
        out.append((a, b))
        return np.array(out)

    def breakpoints(self) -> np.ndarray:
        return np.concatenate([self.times, self.times + self.durations])

    def max_gap(self) -> float:
        """max_k (tau_{k+1} - tau_k) v (T - tau_m), with tau_0 = 0."""
        pts = np.concatenate([[0.0], self.times, [self.horizon]])
        return float(np.max(np.diff(pts)))

    def to_json(self) -> dict:
        return {"horizon": float(self.horizon), "times": self.times.tolist(),
                "durations": self.durations.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "SlippingSchedule":
        return cls(np.array(obj["times"], dtype=float), np.array(obj["durations"], dtype=float),
                   float(obj["horizon"]))


def empty_schedule(T: float) -> SlippingSchedule:
    return SlippingSchedule(np.zeros(0), np.zeros(0), T)


def sample_schedule(spec: JumpMeasureSpec, eps: float, T: float, seed: SeedLike = 0) -> SlippingSchedule:
    """Jump times with Exponential(lambda) gaps on [0, T] and durations from the jump law."""
    lr = spec.log_rate(eps)
    if lr > LOG_RATE_CAP:
        raise SaturationError(f"lambda({eps}) = exp({lr:.4g}) exceeds exp({LOG_RATE_CAP:g}); "
                              f"smallest usable eps is {saturation_floor(spec)}", saturation_floor(spec))
    lam = float(np.exp(lr))
    if not lam > 0:
        raise ValueError("jump rate must be positive")
    if lam * T > MAX_EXPECTED_JUMPS:
        raise SaturationError(f"lambda*T = {lam * T:.3g} jumps is beyond the simulation budget")
    rng = as_rng(seed)
    chunk = max(8, int(np.ceil(lam * T * 1.2 + 8)))
    times = []
    t = 0.0
    while True:
        arr = t + np.cumsum(rng.exponential(1.0 / lam, chunk))
        inside = arr[arr <= T]
        times.append(inside)
        if inside.size < chunk:
            break
        t = float(arr[-1])
    times = np.concatenate(times)
    durations = np.asarray(spec.sampler(rng.random(times.size), eps), dtype=float)
    return SlippingSchedule(times, durations, T)


def jump_count_law(lam: float, T: float, m: int) -> float:
    """P(tau_m <= T < tau_{m+1}) = exp(-lam T) (lam T)^m / m!."""
    from math import lgamma
    return float(np.exp(-lam * T + m * np.log(lam * T) - lgamma(m + 1)))


# --------------------------------------------------------------------------
# curve constructions

def _slip_grid(grid, schedule: SlippingSchedule) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    return merge_grid(grid, schedule.breakpoints())


def _union_before(t: np.ndarray, iv: np.ndarray) -> np.ndarray:
    """|U intersect [0, t]| for merged intervals iv."""
    if iv.shape[0] == 0:
        return np.zeros_like(t)
    return np.sum(np.clip(t[:, None], iv[:, 0], iv[:, 1]) - iv[:, 0], axis=1)


def translational_slip(curve: BaseCurve, schedule: SlippingSchedule, grid, check: bool = True) -> SampledPath:
    """Frozen during slips, then continues along the curve with the slipped arcs cut out."""
    t = _slip_grid(grid, schedule)
    iv = schedule.intervals()
    vals = curve(t)
    for a, b in iv:
        vals -= curve(np.clip(t, a, b)) - curve(np.array([a]))
    out = SampledPath(t, vals, "finite-variation")
    if check:
        assert_slip_bounds("translational", curve, schedule, out)
    return out


def inplace_slip(curve: BaseCurve, schedule: SlippingSchedule, grid, check: bool = True) -> SampledPath:
    """Slips extend the curve along its tangent; afterwards the curve resumes, delayed and shifted."""
    t = _slip_grid(grid, schedule)
    iv = schedule.intervals()
    lost = _union_before(t, iv)
    s = t - lost
    vals = curve(s)
    for a, b in iv:
        sa = a - _union_before(np.array([a]), iv)[0]
        tangent = curve.velocity(np.array([sa]))[0]
        vals += np.clip(t - a, 0.0, b - a)[:, None] * tangent
    out = SampledPath(t, vals, "finite-variation")
    if check:
        assert_slip_bounds("inplace", curve, schedule, out)
    return out


def piecewise_linear_approx(curve: BaseCurve, schedule: SlippingSchedule, grid, check: bool = True) -> SampledPath:
    """Velocity frozen at the last jump time; starts at the curve's initial point."""
    t = _slip_grid(grid, schedule)
    anchors = np.concatenate([[0.0], schedule.times])
    k = np.searchsorted(anchors, t[:-1], side="right") - 1
    xi = curve.velocity(anchors)[k]
    vals = np.vstack([np.zeros((1, xi.shape[1])), np.cumsum(xi * np.diff(t)[:, None], axis=0)])
    vals += curve(np.zeros(1))
    out = SampledPath(t, vals, "finite-variation")
    if check:
        assert_slip_bounds("piecewise", curve, schedule, out)
    return out


SLIP_MODES = {
    "translational": translational_slip,
    "inplace": inplace_slip,
    "piecewise": piecewise_linear_approx,
}


def slip_bounds(mode: str, curve: BaseCurve, schedule: SlippingSchedule, out: SampledPath) -> dict:
    """Observed and allowed deviation and variation for one perturbed curve."""
    t = out.grid
    T = float(t[-1])
    C = curve.speed_bound
    dev = float(np.max(np.linalg.norm(out.values - curve(t), axis=1)))
    var_path = np.concatenate([[0.0], np.cumsum(np.linalg.norm(out.increments, axis=1))])
    S = schedule.subordinator(t)
    if mode == "translational":
        dev_bound = C * float(S[-1])
        # polygon of gamma on the same nodes; never exceeds V(gamma)
        var_bound = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(curve(t), axis=0), axis=1))])
    elif mode == "inplace":
        dev_bound = 2.0 * C * float(S[-1])
        var_bound = C * (t + S)
        if curve.arclength is not None:
            var_bound = np.minimum(var_bound, np.array([curve.variation(x) for x in t]) + C * S)
    elif mode == "piecewise":
        Ce = max(C, curve.lipschitz if curve.lipschitz is not None else np.inf)
        if not np.isfinite(Ce):
            raise ValueError("piecewise-linear bound needs a Lipschitz constant for the velocity")
        dev_bound = Ce * T * schedule.max_gap()
        var_bound = C * t
    else:
        raise ValueError(f"unknown slipping mode {mode!r}")
    slack = 1e-12 * max(1.0, float(np.max(np.abs(out.values))), float(np.max(var_bound)))
    return {
        "deviation": dev, "deviation_bound": dev_bound,
        "variation": float(var_path[-1]), "variation_bound": float(var_bound[-1]),
        "deviation_ok": dev <= dev_bound + slack,
        "variation_ok": bool(np.all(var_path <= var_bound + slack)),
    }


def assert_slip_bounds(mode, curve, schedule, out) -> dict:
    rep = slip_bounds(mode, curve, schedule, out)
    if not rep["deviation_ok"]:
        raise BoundViolationError(f"{mode}: deviation {rep['deviation']} > bound {rep['deviation_bound']}")
    if not rep["variation_ok"]:
        raise BoundViolationError(f"{mode}: variation {rep['variation']} > bound {rep['variation_bound']}")
    return rep


# --------------------------------------------------------------------------
# Brownian perturbation

def brownian_perturb(b: DriftField, gamma0, eps: float, grid, seed: SeedLike = 0) -> SampledPath:
    """Euler-Maruyama for d gamma = b(t, gamma) dt + sqrt(eps) dB, split as A + M."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    grid = np.asarray(grid, dtype=float)
    x0 = np.atleast_1d(np.asarray(gamma0, dtype=float))
    d = x0.size
    dt = np.diff(grid)
    rng = as_rng(seed)
    dB = np.sqrt(eps * dt)[:, None] * rng.standard_normal((dt.size, d))
    vals = np.empty((grid.size, d))
    drift = np.zeros((grid.size, d))
    vals[0] = x0
    for k in range(dt.size):
        step = np.asarray(b(grid[k], vals[k]), dtype=float) * dt[k]
        drift[k + 1] = drift[k] + step
        vals[k + 1] = vals[k] + step + dB[k]
    mart = np.vstack([np.zeros((1, d)), np.cumsum(dB, axis=0)])
    a_part = SampledPath(grid, drift + x0, "finite-variation")
    m_part = SampledPath(grid, mart, "local-martingale", bracket=scaled_identity_bracket(grid, d, eps))
    vals = a_part.values + m_part.values
    return SampledPath(grid, vals, "semimartingale", a_part, m_part)


# --------------------------------------------------------------------------
# condition tables

@dataclass(frozen=True)
class ConditionTable:
    name: str
    column: str
    eps: np.ndarray
    values: np.ndarray
    verdict: bool
    extra: dict = field(default_factory=dict)

    def rows(self):
        return [{"eps": float(e), self.column: float(v)} for e, v in zip(self.eps, self.values)]


def mean_jump_quadrature(spec: JumpMeasureSpec, eps: float) -> float:
    """int_0^inf x nu^eps(dx) by adaptive quadrature on the density."""
    if spec.density is None:
        raise NonIntegrableError("measure has no density to integrate")
    scale = float(spec.scale(eps)) if spec.scale is not None else 1.0
    f = lambda x: x * float(spec.density(x, eps))
    head, _ = integrate.quad(f, 0.0, 50.0 * scale, limit=200, epsabs=0.0, epsrel=1e-12)
    tail, _ = integrate.quad(f, 50.0 * scale, np.inf, limit=200)
    val = head + tail
    if not np.isfinite(val):
        raise NonIntegrableError(f"int x nu(dx) diverges at eps={eps}")
    return val


def _sorted_eps(eps_grid):
    eps = np.asarray(sorted(eps_grid, reverse=True), dtype=float)
    if np.any(eps <= 0):
        raise ValueError("eps values must be positive")
    return eps


def check_mean_jump_condition(spec: JumpMeasureSpec, eps_grid, method: str = "closed") -> ConditionTable:
    """eps * log int x nu^eps(dx) along decreasing eps; verdict: strictly decreasing."""
    eps = _sorted_eps(eps_grid)
    vals = []
    for e in eps:
        if method == "closed" and spec.log_mean_jump is not None:
            lm = float(spec.log_mean_jump(e))
        else:
            m = mean_jump_quadrature(spec, e)
            lm = np.log(m) if m > 0 else -np.inf
        if not np.isfinite(lm) and lm > 0:
            raise NonIntegrableError(f"int x nu(dx) diverges at eps={e}")
        vals.append(e * lm)
    vals = np.array(vals)
    verdict = bool(vals.size > 1 and np.all(np.diff(vals) < 0))
    return ConditionTable(spec.name, "eps_log_mean_jump", eps, vals, verdict)


def check_rate_divergence(spec: JumpMeasureSpec, eps_grid) -> ConditionTable:
    """eps * lambda(eps) along decreasing eps; verdict: strictly increasing."""
    eps = _sorted_eps(eps_grid)
    logs = np.array([np.log(e) + spec.log_rate(e) for e in eps])
    vals = np.exp(np.minimum(logs, LOG_RATE_CAP))
    vals[logs > LOG_RATE_CAP] = np.inf
    verdict = bool(logs.size > 1 and np.all(np.diff(logs) > 1e-9))
    return ConditionTable(spec.name, "eps_rate", eps, vals, verdict, {"log_eps_rate": logs})
