"""Acceptance gate: thirteen end-to-end checks, each with its own tolerance and time budget.

Run under pytest, or directly with ``python3 tests/test_acceptance.py`` for the
plain PASS/FAIL listing. Timings exclude the one-off load of the compiled
kernels, which happens in ``_warm``.
"""
import json
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from rollsim import cli
from rollsim import development as dev
from rollsim import geometry as geo
from rollsim import ldp
from rollsim import paths as P
from rollsim import rotation as rot
from rollsim import slipping as S


def _warm():
    for M in (geo.flat(2), geo.sphere(2), geo.hyperbolic(), geo.torus(2)):
        g = P.uniform_grid(0.1, 0.05)
        x = dev.project(dev.develop(M, geo.default_frame(M), P.SampledPath(g, np.outer(g, [1.0, 0.5]))))
        dev.antidevelop(M, geo.default_frame(M), x)


def _wiggle(g):
    return np.stack([0.8 * g + 0.2 * np.sin(3 * g), 0.3 * np.sin(2 * g)], 1)


def c01_geodesic_oracle():
    S2, H = geo.sphere(2), geo.hyperbolic()
    g = P.uniform_grid(2 * np.pi, 1e-4)
    u = dev.develop(S2, geo.default_frame(S2), P.SampledPath(g, np.outer(g, [1.0, 0.0])))
    e1 = geo.distance(S2, u.bases[-1], u.bases[0])
    g = P.uniform_grid(1.0, 1e-4)
    v = dev.develop(H, geo.default_frame(H), P.SampledPath(g, np.outer(g, [1.0, 0.0])))
    e2 = float(np.max(np.abs(v.bases[-1] - [np.tanh(1), 1 / np.cosh(1)])))
    return e1 <= 1e-5 and e2 <= 1e-6, f"sphere return {e1:.2e}, half-plane endpoint {e2:.2e}"


def c02_flat_identity():
    M = geo.flat(3)
    g = P.uniform_grid(3.0, 1e-3)
    corners = np.array([[0, 0, 0], [1, 2, -1], [0.5, -1, 2], [3, 0, 1.0]])
    pts = np.stack([np.interp(g, [0, 1, 2, 3], corners[:, j]) for j in range(3)], 1)
    x = dev.project(dev.develop(M, geo.default_frame(M), P.SampledPath(g, pts)))
    err = float(np.max(np.abs(x.points - pts)))
    return err <= 1e-10, f"max error {err:.2e}"


def c03_arc_length_identity():
    g = P.uniform_grid(2.0, 1e-4)
    polygon = np.stack([np.interp(g, [0, 0.7, 1.3, 2], [0, 0.7, 0.7, 1.2]),
                        np.interp(g, [0, 0.7, 1.3, 2], [0, 0, 0.6, 0.1])], 1)
    circle = 0.5 * np.stack([np.sin(2 * g), 1 - np.cos(2 * g)], 1)
    curves = {"polygon": polygon, "circle": circle, "wiggle": _wiggle(g)}
    worst = 0.0
    for M in (geo.sphere(2), geo.hyperbolic()):
        for vals in curves.values():
            gam = P.SampledPath(g, vals)
            L = dev.trace_length(dev.project(dev.develop(M, geo.default_frame(M), gam)))
            worst = max(worst, abs(L - P.total_variation(gam)))
    return worst <= 1e-5, f"worst |length - variation| {worst:.2e} over 6 cases"


def c04_structure_preservation():
    M = geo.sphere(2)
    basis = rot.so_basis(2)
    g = P.uniform_grid(1.0, 1e-3)
    b = S.linear_drift(np.zeros((2, 2)), np.array([1.0, 0.0]))
    frame_defect = rot_defect = pre = 0.0
    for r in range(1000):
        gam = S.brownian_perturb(b, [0.0, 0.0], 0.2, g, P.replica_rng(4, r, 0))
        w = P.sample_brownian(basis.size, g, 0.2, P.replica_rng(4, r, 1))
        u = dev.stochastic_develop(M, geo.default_frame(M), gam, w, basis)
        frame_defect = max(frame_defect, u.max_defect())
        pre = max(pre, u.stats["max_defect_pre"])
        rot_defect = max(rot_defect, rot.integrate_rotation(w, basis).max_defect())
    ok = frame_defect <= 1e-12 and rot_defect <= 1e-12
    return ok, f"frame defect {frame_defect:.2e} (pre-correction {pre:.2e}), rotation defect {rot_defect:.2e}"


def c05_decomposition_consistency():
    M = geo.sphere(2)
    basis = rot.so_basis(2)
    steps = (1e-2, 5e-3, 2.5e-3)
    fine = P.uniform_grid(1.0, steps[-1])
    b = S.linear_drift(np.zeros((2, 2)), np.array([1.0, 0.0]))
    diffs = np.zeros((100, len(steps)))
    for seed in range(100):
        gam = S.brownian_perturb(b, [0.0, 0.0], 0.2, fine, P.replica_rng(5, seed, 0))
        w = P.sample_brownian(basis.size, fine, 0.2, P.replica_rng(5, seed, 1))
        for j, h in enumerate(steps):
            stride = int(round(h / steps[-1]))
            g = fine[::stride]
            gs = P.SampledPath(g, gam.values[::stride], "finite-variation")
            ws = P.SampledPath(g, w.values[::stride])
            a = dev.stochastic_develop(M, geo.default_frame(M), gs, ws, basis)
            c = dev.develop_decomposed(M, geo.default_frame(M), gs, ws, basis)[2]
            diffs[seed, j] = np.max(geo.distance_batch(M, a.bases, c.bases))
    mean = diffs.mean(axis=0)
    ratios = mean[:-1] / mean[1:]
    ok = bool(np.all(ratios >= 2.0))
    return ok, f"mean sup distance {np.array2string(mean, precision=4)}, ratios {np.array2string(ratios, precision=3)}"


def c06_round_trip():
    g = P.uniform_grid(1.0, 1e-4)
    gam = P.SampledPath(g, _wiggle(g))
    worst = 0.0
    for M in (geo.flat(2), geo.sphere(2), geo.hyperbolic(), geo.torus(2, period=1.0)):
        u0 = geo.default_frame(M)
        y = dev.antidevelop(M, u0, dev.project(dev.develop(M, u0, gam)))
        worst = max(worst, float(np.max(np.abs(y.values - gam.values))))
    return worst <= 1e-6, f"worst driver error {worst:.2e} over flat, sphere, half-plane, torus"


def c07_covariation():
    val = P.covariation_independence_check(1000, P.uniform_grid(1.0, 1e-3), seed=7)
    bound = 3 * np.sqrt(1e-3 * 1.0)
    return val <= bound, f"mean |S| {val:.4f} <= {bound:.4f}"


def c08_jump_law():
    R = 100_000
    parts = []
    ok = True
    for i, (lam, T, m) in enumerate([(2.0, 1.0, 0), (2.0, 1.0, 1), (5.0, 0.5, 2)]):
        spec = S.rate_family(f"rate{lam:g}", lambda e, lam=lam: lam)
        rng = P.replica_rng(8, i)  # one stream per triple; successive schedules are independent
        counts = np.array([len(S.sample_schedule(spec, 1.0, T, rng)) for _ in range(R)])
        p = S.jump_count_law(lam, T, m)
        sigma = np.sqrt(p * (1 - p) / R)
        z = (np.mean(counts == m) - p) / sigma
        ok &= abs(z) <= 3
        parts.append(f"({lam:g},{T:g},{m}) z={z:+.2f}")
    return bool(ok), ", ".join(parts)


def c09_condition_tables():
    eps = [0.3, 0.2, 0.1]
    spec = S.vanishing_mean_measure()
    closed = S.check_mean_jump_condition(spec, eps)
    quad = S.check_mean_jump_condition(spec, eps, method="quadrature")
    oracle = -2.0 * closed.eps ** -0.1
    err = float(np.max(np.abs(closed.values / oracle - 1)))
    qerr = float(np.max(np.abs(quad.values / oracle - 1)))
    rate = S.check_rate_divergence(S.exploding_rate_measure(), [0.1]).values[0]
    ok = err <= 0.01 and qerr <= 0.01 and rate >= 1e3
    return ok, f"mean-jump rel err {err:.1e} (quadrature {qerr:.1e}), eps*lambda(0.1) = {rate:.4g}"


def c10_slipping_bounds():
    curve = S.circle(1.0)
    T = 2 * np.pi
    grid = P.uniform_grid(T, 1e-2)
    # the vanishing-mean measure at eps = 2 has rate 0.63 and mean jump 0.63, so
    # slips actually happen; the exploding-rate measure at eps = 0.3 has rate ~43
    setups = {"translational": (S.vanishing_mean_measure(), 2.0),
              "inplace": (S.vanishing_mean_measure(), 2.0),
              "piecewise": (S.exploding_rate_measure(), 0.3)}
    violations, jumps = 0, 0
    for k, (mode, (spec, eps)) in enumerate(setups.items()):
        for r in range(1000):
            sch = S.sample_schedule(spec, eps, T, P.replica_rng(10, k, r))
            out = S.SLIP_MODES[mode](curve, sch, grid, check=False)
            rep = S.slip_bounds(mode, curve, sch, out)
            violations += not (rep["deviation_ok"] and rep["variation_ok"])
            jumps += len(sch)
    return violations == 0, f"{violations} violations in 3000 samples ({jumps} jumps in total)"


def c11_action_properties():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    b = S.linear_drift(A)
    g = P.uniform_grid(1.0, 1e-3)
    flow = np.stack([np.cos(g), -np.sin(g)], 1)
    zero = ldp.drift_action(P.SampledPath(g, flow), b)
    bump = np.stack([np.sin(np.pi * g) ** 2, np.sin(2 * np.pi * g)], 1)
    deltas = np.array([0.025, 0.05, 0.1, 0.2])
    vals = [ldp.drift_action(P.SampledPath(g, flow + d * bump), b) - zero for d in deltas]
    slope = float(np.polyfit(np.log(deltas), np.log(vals), 1)[0])
    rng = np.random.default_rng(11)
    gap = -np.inf
    for _ in range(100):
        c1, c2 = np.cumsum(rng.normal(size=(2, g.size, 2)), axis=1) * 0.03
        for act in (ldp.h1_action, lambda p: ldp.drift_action(p, b)):
            m = act(P.SampledPath(g, 0.5 * (c1 + c2)))
            gap = max(gap, m - 0.5 * (act(P.SampledPath(g, c1)) + act(P.SampledPath(g, c2))))
    ok = zero <= 1e-4 and abs(slope - 2.0) <= 0.05 and gap <= 1e-12
    return ok, f"action on flow {zero:.2e}, fitted exponent {slope:.4f}, worst convexity gap {gap:.2e}"


def c12_rare_event_monotonicity():
    with tempfile.TemporaryDirectory() as d:
        code = cli.main(["--out-dir", d, "--seed", "12", "--threads", "4",
                         "--set", "replicas=10000", "--set", "eta=0.5", "--set", "T=1.0",
                         "--set", "eps=[0.4, 0.2, 0.1]", "--set", 'scan_mode="brownian"', "scan"])
        rows = json.loads((Path(d) / "scan.json").read_text())["rows"]
    vals = [r["eps_log_phat"] for r in rows]
    decreasing = all(b < a for a, b in zip(vals, vals[1:]))
    separated = rows[-1]["ci_hi"] < rows[0]["ci_lo"]
    ok = code == 0 and decreasing and separated
    return ok, ("eps log p = " + ", ".join(f"{v:.4f}" for v in vals)
                + f"; CI first [{rows[0]['ci_lo']:.4f}, {rows[0]['ci_hi']:.4f}]"
                + f" last [{rows[-1]['ci_lo']:.4f}, {rows[-1]['ci_hi']:.4f}]")


RUNS = {
    "develop": ['curve={"name": "lissajous"}', "h=0.001"],
    "roll": ['slip="inplace"', 'measure={"name": "exploding-rate"}', "eps=[0.4, 0.3]", "twist_eps=0.1"],
    "rate": ['rate={"level": "base", "target": "curve", "twist_amp": 0.2, "budget": 100}', "h=0.01"],
    "scan": ["replicas=1000", "h=0.01", "eps=[0.4, 0.2]", "twist_eps=0.1"],
    "check": [],
}


def c13_determinism():
    mismatched, nfiles = [], 0
    with tempfile.TemporaryDirectory() as d:
        for command, sets in RUNS.items():
            outs = []
            for k, threads in enumerate(("1", "2")):
                out = Path(d) / f"{command}{k}"
                out.mkdir()
                args = ["--out-dir", str(out), "--seed", "13", "--threads", threads]
                for s in sets:
                    args += ["--set", s]
                if cli.main(args + [command]) != 0:
                    return False, f"{command} exited nonzero"
                outs.append(out)
            for f in sorted(outs[0].iterdir()):
                nfiles += 1
                if f.read_bytes() != (outs[1] / f.name).read_bytes():
                    mismatched.append(f"{command}/{f.name}")
    return not mismatched, f"{nfiles} files from 5 commands, mismatches: {mismatched or 'none'}"


CRITERIA = [
    (1, "geodesic oracle", c01_geodesic_oracle, 5),
    (2, "flat-space identity", c02_flat_identity, 1),
    (3, "arc-length identity", c03_arc_length_identity, 10),
    (4, "structure preservation", c04_structure_preservation, 60),
    (5, "decomposition consistency", c05_decomposition_consistency, 120),
    (6, "round trip", c06_round_trip, 10),
    (7, "covariation", c07_covariation, 30),
    (8, "jump-law oracle", c08_jump_law, 30),
    (9, "condition tables", c09_condition_tables, 5),
    (10, "pathwise slipping bounds", c10_slipping_bounds, 60),
    (11, "action properties", c11_action_properties, 30),
    (12, "rare-event monotonicity", c12_rare_event_monotonicity, 600),
    (13, "determinism", c13_determinism, None),
]


def evaluate(number, name, fn, budget):
    t0 = time.perf_counter()
    ok, detail = fn()
    elapsed = time.perf_counter() - t0
    in_time = budget is None or elapsed < budget
    limit = "" if budget is None else f" / {budget} s"
    status = "PASS" if ok and in_time else "FAIL"
    line = f"criterion {number:2d} {status}  {name}: {detail}; {elapsed:.1f} s{limit}"
    return ok and in_time, line


@pytest.fixture(scope="module", autouse=True)
def warm():
    _warm()


@pytest.mark.parametrize("number,name,fn,budget", CRITERIA, ids=[f"c{c[0]:02d}" for c in CRITERIA])
def test_criterion(number, name, fn, budget, capsys):
    ok, line = evaluate(number, name, fn, budget)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    _warm()
    results = [evaluate(*c) for c in CRITERIA]
    for _, line in results:
        print(line, flush=True)
    print(f"{sum(ok for ok, _ in results)}/{len(results)} criteria passed")
