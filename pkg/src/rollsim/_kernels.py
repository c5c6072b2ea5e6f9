"""Compiled inner loops for the built-in backends (flat, torus, sphere, half-plane).

Each replica is integrated by its own scalar loop, so the result for one
replica never depends on which other replicas share the call.
"""
from __future__ import annotations

import numpy as np
from numba import njit

FLAT, TORUS, SPHERE, HYPERBOLIC = 0, 1, 2, 3
KIND_CODES = {"flat": FLAT, "torus": TORUS, "sphere": SPHERE, "hyperbolic": HYPERBOLIC}

OK, DOMAIN, NOT_INVERTIBLE = 0, 1, 2


@njit(cache=True)
def _field(kind, x, E, xi, vx, dE):
    n, d = E.shape
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += E[i, j] * xi[j]
        vx[i] = s
    if kind == SPHERE:
        for m in range(d):
            c = 0.0
            for i in range(n):
                c += vx[i] * E[i, m]
            for i in range(n):
                dE[i, m] = -x[i] * c
    elif kind == HYPERBOLIC:
        inv = 1.0 / x[1]
        for m in range(2):
            dE[0, m] = inv * (vx[0] * E[1, m] + vx[1] * E[0, m])
            dE[1, m] = inv * (vx[1] * E[1, m] - vx[0] * E[0, m])
    else:
        for i in range(n):
            for m in range(d):
                dE[i, m] = 0.0


@njit(cache=True)
def workspace(n, d):
    return np.empty((5, n)), np.empty((5, n, d))


@njit(cache=True)
def rk4_step(kind, x, E, xi, x_out, E_out, wv, we):
    """RK4 over unit pseudo-time; ``wv``/``we`` are scratch buffers from ``workspace``."""
    n, d = E.shape
    xs = wv[4]
    Es = we[4]
    _field(kind, x, E, xi, wv[0], we[0])
    for stage in range(1, 4):
        c = 1.0 if stage == 3 else 0.5
        for i in range(n):
            xs[i] = x[i] + c * wv[stage - 1, i]
            for m in range(d):
                Es[i, m] = E[i, m] + c * we[stage - 1, i, m]
        _field(kind, xs, Es, xi, wv[stage], we[stage])
    for i in range(n):
        x_out[i] = x[i] + (wv[0, i] + 2.0 * (wv[1, i] + wv[2, i]) + wv[3, i]) / 6.0
        for m in range(d):
            E_out[i, m] = E[i, m] + (we[0, i, m] + 2.0 * (we[1, i, m] + we[2, i, m]) + we[3, i, m]) / 6.0


@njit(cache=True)
def _metric_scale(kind, x):
    if kind == HYPERBOLIC:
        return 1.0 / (x[1] * x[1])
    return 1.0


@njit(cache=True)
def defect(kind, x, E):
    n, d = E.shape
    w = _metric_scale(kind, x)
    out = 0.0
    for a in range(d):
        for b in range(d):
            s = 0.0
            for i in range(n):
                s += E[i, a] * E[i, b]
            s *= w
            if a == b:
                s -= 1.0
            out = max(out, abs(s))
    if kind == SPHERE:
        r = 0.0
        for i in range(n):
            r += x[i] * x[i]
        out = max(out, abs(r - 1.0))
        for a in range(d):
            s = 0.0
            for i in range(n):
                s += x[i] * E[i, a]
            out = max(out, abs(s))
    return out


@njit(cache=True)
def polar(kind, x, E):
    n, d = E.shape
    if kind == SPHERE:
        r = 0.0
        for i in range(n):
            r += x[i] * x[i]
        r = np.sqrt(r)
        for i in range(n):
            x[i] /= r
        for a in range(d):
            s = 0.0
            for i in range(n):
                s += x[i] * E[i, a]
            for i in range(n):
                E[i, a] -= s * x[i]
    w = _metric_scale(kind, x)
    S = np.empty((d, d))
    for a in range(d):
        for b in range(d):
            s = 0.0
            for i in range(n):
                s += E[i, a] * E[i, b]
            S[a, b] = s * w
    lam, V = np.linalg.eigh(S)
    C = np.zeros((d, d))
    for a in range(d):
        for b in range(d):
            s = 0.0
            for k in range(d):
                s += V[a, k] * V[b, k] / np.sqrt(lam[k])
            C[a, b] = s
    F = E.copy()
    for i in range(n):
        for b in range(d):
            s = 0.0
            for a in range(d):
                s += F[i, a] * C[a, b]
            E[i, b] = s


@njit(cache=True)
def _wrap(kind, period, x):
    if kind == TORUS:
        for i in range(x.size):
            x[i] = x[i] - period * np.floor(x[i] / period)


@njit(cache=True)
def _valid(kind, x):
    for i in range(x.size):
        if not np.isfinite(x[i]):
            return False
    if kind == HYPERBOLIC and x[1] <= 0.0:
        return False
    return True


MAX_SUBSTEPS = 1024
# frames are re-orthonormalized once their defect passes TRIGGER; the
# threshold handed to the loops is the budget a single step may consume
TRIGGER = 1e-12


@njit(cache=True)
def adaptive_step(kind, x, E, xi, x_out, E_out, wv, we, xs, Es, xs_step, budget):
    """RK4 over the increment ``xi``, halved into equal substeps until the step
    adds at most ``budget`` to the frame defect (the field is autonomous, so
    substeps integrate the same step more finely)."""
    rk4_step(kind, x, E, xi, x_out, E_out, wv, we)
    if kind == FLAT or kind == TORUS:
        return 1
    d0 = defect(kind, x, E)
    m = 1
    while defect(kind, x_out, E_out) > d0 + budget and m < MAX_SUBSTEPS:
        m *= 2
        for a in range(xi.size):
            xs_step[a] = xi[a] / m
        x_out[:] = x
        E_out[:, :] = E
        for _ in range(m):
            xs[:] = x_out
            Es[:, :] = E_out
            rk4_step(kind, xs, Es, xs_step, x_out, E_out, wv, we)
    return m


@njit(cache=True)
def _correct(kind, x, E, stats):
    dpre = defect(kind, x, E)
    if dpre > stats[0]:
        stats[0] = dpre
    dpost = dpre
    if dpre > TRIGGER:
        polar(kind, x, E)
        stats[2] += 1.0
        dpost = defect(kind, x, E)
    if dpost > stats[1]:
        stats[1] = dpost


@njit(cache=True, nogil=True)
def develop_loop(kind, period, x0, E0, dgamma, vertical, has_vertical, threshold,
                 record_frames, bases, frames, stats):
    """Integrate every replica; returns (status, replica, step) of the first failure."""
    R, N, d = dgamma.shape
    n = x0.shape[1]
    x = np.empty(n); E = np.empty((n, d))
    xn = np.empty(n); En = np.empty((n, d))
    xs = np.empty(n); Es = np.empty((n, d)); xs_step = np.empty(d)
    wv, we = workspace(n, d)
    # the vertical factor conjugates E^T E, which can scale its largest entry by up to d
    budget = (threshold / d if has_vertical else threshold) - TRIGGER
    for r in range(R):
        x[:] = x0[r]
        E[:, :] = E0[r]
        bases[r, 0] = x
        if record_frames:
            frames[r, 0] = E
        for k in range(N):
            adaptive_step(kind, x, E, dgamma[r, k], xn, En, wv, we, xs, Es, xs_step, budget)
            if has_vertical:
                for i in range(n):
                    for b in range(d):
                        s = 0.0
                        for a in range(d):
                            s += En[i, a] * vertical[r, k, a, b]
                        E[i, b] = s
            else:
                E[:, :] = En
            x[:] = xn
            if not _valid(kind, x):
                return DOMAIN, r, k + 1
            _correct(kind, x, E, stats)
            _wrap(kind, period, x)
            bases[r, k + 1] = x
            if record_frames:
                frames[r, k + 1] = E
    return OK, -1, -1


@njit(cache=True)
def _minimal_image(kind, period, dx):
    if kind == TORUS:
        for i in range(dx.size):
            dx[i] = dx[i] - period * np.round(dx[i] / period)


@njit(cache=True)
def _solve_frame(kind, E, r, out):
    n, d = E.shape
    if kind == SPHERE:
        for a in range(d):
            s = 0.0
            for i in range(n):
                s += E[i, a] * r[i]
            out[a] = s
    else:
        sol = np.linalg.solve(E, r)
        for a in range(d):
            out[a] = sol[a]


@njit(cache=True)
def lift_loop(kind, period, x0, E0, pts, threshold, bases, frames, xis, stats, max_iter):
    """Horizontal lift of a sampled manifold curve; step increments go to ``xis``."""
    npts, n = pts.shape
    d = E0.shape[1]
    x = x0.copy(); E = E0.copy()
    xn = np.empty(n); En = np.empty((n, d))
    dx = np.empty(n); xi = np.empty(d); delta = np.empty(d)
    xs = np.empty(n); Es = np.empty((n, d)); xs_step = np.empty(d)
    wv, we = workspace(n, d)
    bases[0] = x
    frames[0] = E
    for k in range(npts - 1):
        for i in range(n):
            dx[i] = pts[k + 1, i] - x[i]
        _minimal_image(kind, period, dx)
        _solve_frame(kind, E, dx, xi)
        converged = False
        for it in range(max_iter):
            adaptive_step(kind, x, E, xi, xn, En, wv, we, xs, Es, xs_step, threshold - TRIGGER)
            for i in range(n):
                dx[i] = pts[k + 1, i] - xn[i]
            _minimal_image(kind, period, dx)
            _solve_frame(kind, E, dx, delta)
            dn = 0.0
            xin = 0.0
            for a in range(d):
                xi[a] += delta[a]
                dn += delta[a] * delta[a]
                xin += xi[a] * xi[a]
            if np.sqrt(dn) <= 1e-15 * (1.0 + np.sqrt(xin)):
                converged = True
                break
        if not converged and np.sqrt(dn) > 1e-10 * (1.0 + np.sqrt(xin)):
            return NOT_INVERTIBLE, k + 1
        adaptive_step(kind, x, E, xi, xn, En, wv, we, xs, Es, xs_step, threshold - TRIGGER)
        res = 0.0
        for i in range(n):
            dx[i] = pts[k + 1, i] - xn[i]
        _minimal_image(kind, period, dx)
        for i in range(n):
            res += dx[i] * dx[i]
        if not np.sqrt(res) <= 1e-8:
            return NOT_INVERTIBLE, k + 1
        x[:] = xn
        E[:, :] = En
        if not _valid(kind, x):
            return DOMAIN, k + 1
        _correct(kind, x, E, stats)
        _wrap(kind, period, x)
        xis[k] = xi
        bases[k + 1] = x
        frames[k + 1] = E
    return OK, -1
