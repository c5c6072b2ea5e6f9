import json

import numpy as np
import pytest

from rollsim import cli
from rollsim import io


def run(tmp_path, command, *sets, extra=()):
    args = ["--out-dir", str(tmp_path), *extra]
    for s in sets:
        args += ["--set", s]
    return cli.main(args + [command])


def test_missing_output_dir_is_a_config_error(tmp_path, capsys):
    assert cli.main(["--out-dir", str(tmp_path / "nope"), "develop"]) == 2
    assert "does not exist" in capsys.readouterr().err


def test_bad_json_reports_line(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{\n  "T": 1.0,\n  "h": ,\n}\n')
    assert cli.main(["--config", str(cfg), "--out-dir", str(tmp_path), "develop"]) == 2
    assert "line 3" in capsys.readouterr().err


def test_unknown_field_reports_line(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{\n  "T": 1.0,\n  "hh": 0.1\n}\n')
    assert cli.main(["--config", str(cfg), "--out-dir", str(tmp_path), "develop"]) == 2
    assert "line 3" in capsys.readouterr().err


def test_invalid_values(tmp_path):
    assert run(tmp_path, "develop", "h=-1") == 2
    assert run(tmp_path, "develop", "eps=[-0.1]") == 2
    assert run(tmp_path, "develop", 'manifold={"kind": "klein"}') == 2


def test_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 1, "T": 2.0}))
    c = cli.load_config(str(cfg), ["seed=2", "h=0.01"], {"seed": 3, "out_dir": str(tmp_path)})
    assert (c.seed, c.T, c.h) == (3, 2.0, 0.01)


def test_develop_sphere_great_circle(tmp_path):
    code = run(tmp_path, "develop", f"T={2 * np.pi}", "h=1e-4")
    assert code == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["endpoint_distance_to_start"] <= 1e-5


def test_develop_flat_reproduces_curve(tmp_path):
    code = run(tmp_path, "develop", 'manifold={"kind": "flat", "dim": 2}', 'curve={"name": "lissajous"}', "h=0.01")
    assert code == 0
    _, trace = io.read_csv(tmp_path / "trace.csv")
    from rollsim import slipping as S
    assert np.max(np.abs(trace[:, 1:] - S.lissajous()(trace[:, 0]))) <= 1e-12


def test_roll_twist_only_keeps_planar_files(tmp_path):
    assert run(tmp_path, "roll", "twist_eps=0.2", "h=0.01") == 0
    for i in range(3):
        _, a = io.read_csv(tmp_path / f"roll_{i:02d}_original.csv")
        _, b = io.read_csv(tmp_path / f"roll_{i:02d}_perturbed.csv")
        assert np.array_equal(a, b)


def test_roll_translational_deviation_shrinks(tmp_path):
    assert run(tmp_path, "roll", "slip=\"translational\"", 'curve={"name": "circle"}', "h=0.01") == 0
    runs = json.loads((tmp_path / "roll_summary.json").read_text())["runs"]
    devs = [r["sup_planar_deviation"] for r in runs]
    assert all(b <= a for a, b in zip(devs, devs[1:]))
    assert all(r["bounds"]["deviation_ok"] for r in runs)
    assert (tmp_path / "roll_00_schedule.json").exists()


def test_rate_zero_cost(tmp_path):
    assert run(tmp_path, "rate", "h=0.01") == 0
    assert json.loads((tmp_path / "rate.json").read_text())["total"] <= 1e-4


def test_scan_zero_threshold(tmp_path):
    assert run(tmp_path, "scan", "eta=0", "replicas=20", "h=0.05") == 0
    _, tab = io.read_csv(tmp_path / "scan.csv")
    assert np.all(tab[:, 3] == 1.0)


def test_check_mean_jump_values(tmp_path):
    assert run(tmp_path, "check", 'check={"tightness": {}}') == 0
    res = json.loads((tmp_path / "check.json").read_text())
    assert np.allclose(res["mean_jump"][0]["values"], [-2.257, -2.349, -2.518], rtol=0.01)
    assert res["mean_jump"][0]["verdict"] and res["rate_divergence"][0]["verdict"]


def test_saturated_measure_is_a_numerical_failure(tmp_path, capsys):
    code = run(tmp_path, "roll", 'slip="piecewise"', 'measure={"name": "exploding-rate"}', "eps=[0.01]")
    assert code == 1
    assert "numerical failure" in capsys.readouterr().err


@pytest.mark.parametrize("command,sets", [
    ("develop", ["h=0.01"]),
    ("roll", ['slip="inplace"', 'measure={"name": "exploding-rate"}', "eps=[0.4, 0.3]", "twist_eps=0.1", "h=0.01"]),
    ("rate", ['rate={"level": "base", "target": "curve", "twist_amp": 0.2, "budget": 60}', "h=0.01"]),
    ("scan", ["replicas=300", "h=0.02", "eps=[0.4, 0.2]"]),
    ("check", ['check={"tightness": {"eps": [0.4, 0.2], "a": [1.0], "eta": [0.5], "rho": 0.1, "R": 200, "h": 0.02}}']),
])
def test_reruns_are_byte_identical(tmp_path, command, sets):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    assert run(a, command, *sets, extra=["--seed", "5"]) == 0
    assert run(b, command, *sets, extra=["--seed", "5", "--threads", "2"]) == 0
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir()) and files
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
