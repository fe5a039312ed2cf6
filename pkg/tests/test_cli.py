import csv
import json
import subprocess
import sys
import time

import pytest

from isingq import cli


def write(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def test_two_state_simulation_outputs(tmp_path):
    cfg = write(tmp_path / "c.json", {"kind": "two-state", "omega": 1.3, "alpha": 0.4, "t_end": 10, "samples": 501})
    out = tmp_path / "run"
    assert cli.main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    rows = list(csv.reader((out / "trajectory.csv").open()))
    assert rows[0] == ["t", "q0", "q1", "p0", "p1", "s0", "s1"]
    assert len(rows) == 502
    summary = json.loads((out / "summary.json").read_text())
    assert summary["p0_max_error"] < 1e-10 and summary["signs_ok"]
    assert summary["config"]["omega"] == 1.3
    signs = json.loads((out / "signs.json").read_text())
    assert signs["n_flips"] == summary["n_flips"] > 0


def test_runs_are_byte_identical(tmp_path):
    cfg = write(tmp_path / "c.json", {"kind": "sector", "shape": [1, 1, 4], "Ns": 8, "m": 0.5, "e": 0.3,
                                      "A": {"A0": "0.1*x3"}, "initial": {"type": "random"}, "samples": 3})
    for name in ("a", "b"):
        assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / name), "--seed", "7"]) == 0
    for f in ("density.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "c"), "--seed", "8"])
    assert (tmp_path / "a" / "density.csv").read_bytes() != (tmp_path / "c" / "density.csv").read_bytes()


def test_sector_summary_resolves_config(tmp_path):
    cfg = write(tmp_path / "c.json", {"kind": "sector", "shape": [1, 1, 3], "Ns": 8, "m": 0.5, "e": 0.3,
                                      "t_end": 0.5, "samples": 2})
    out = tmp_path / "run"
    assert cli.main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    conf = summary["config"]
    assert conf["geometry"]["shape"] == [1, 1, 3]
    assert conf["A0"] == [0.0, 0.0, 0.0] and conf["particles"] == 1
    assert summary["two_rule_max_difference"] < 1e-12
    assert summary["seed"] == 0
    rows = list(csv.DictReader((out / "density.csv").open()))
    assert len(rows) == 2 * 3


def test_crosscheck_simulation(tmp_path):
    cfg = write(tmp_path / "c.json", {"kind": "crosscheck", "n_sites": 6, "trials": 2})
    out = tmp_path / "run"
    assert cli.main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    assert json.loads((out / "summary.json").read_text())["max_deviation"] < 1e-8


@pytest.mark.parametrize("cfg", [
    {"kind": "nope"},
    {"kind": "two-state", "samples": 1},
    {"kind": "two-state", "bogus": 1},
    {"kind": "sector", "shape": [1, 1, 3], "Ns": 4, "m": 1.0},
    {"kind": "sector", "shape": [1, 1, 3], "particles": 2},
    {"kind": "sector", "L": 3},
])
def test_invalid_config_exits_2(tmp_path, cfg):
    path = write(tmp_path / "c.json", cfg)
    assert cli.main(["simulate", "--config", path, "--out", str(tmp_path / "o")]) == 2


def test_missing_and_malformed_files_exit_2(tmp_path):
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("kind = ")
    assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert cli.main(["demo", "no-such-demo", "--out", str(tmp_path)]) == 2
    assert cli.main(["verify", "--suite", "no-such-suite"]) == 2


def test_thread_limit_validation(tmp_path, monkeypatch):
    cfg = write(tmp_path / "c.json", {"kind": "two-state", "samples": 5})
    monkeypatch.setenv("ISINGQ_THREADS", "zero")
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    monkeypatch.setenv("ISINGQ_THREADS", "1")
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0


def test_verify_reports_json(tmp_path, capsys):
    out = tmp_path / "report.json"
    assert cli.main(["verify", "--suite", "clifford", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["passed"] and report["suites"][0]["suite"] == "clifford"
    assert "PASS [clifford]" in capsys.readouterr().err


def test_two_state_demo_with_toml(tmp_path):
    cfg = tmp_path / "d.toml"
    cfg.write_text("omega = 2.0\nalpha = 0.1\n")
    assert cli.main(["demo", "two-state", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
    assert json.loads((tmp_path / "d" / "metrics.json").read_text())["signs_ok"]


def test_tunneling_demo_outputs(tmp_path):
    cfg = write(tmp_path / "t.json", {"n": 8192, "dt": 0.02})
    out = tmp_path / "t"
    assert cli.main(["demo", "tunneling", "--config", cfg, "--out", str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["config"]["n"] == 8192
    assert (out / "frames.csv").read_text().startswith("x,t,w\n")


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "isingq", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "verify" in res.stdout and "simulate" in res.stdout and "demo" in res.stdout


@pytest.mark.slow
def test_verify_all_tiny_within_budget(capsys):
    t0 = time.perf_counter()
    assert cli.main(["verify"]) == 0
    assert time.perf_counter() - t0 < 60
    capsys.readouterr()


def test_schrodinger_scenario_from_toml(tmp_path):
    cfg = tmp_path / "s.toml"
    cfg.write_text('kind = "schrodinger"\n'
                   '[grid]\nshape = [256]\nspacing = 0.1\n'
                   '[packet]\ncenter = -4.0\nwidth = 1.0\nmomentum = 2.0\n'
                   '[potential]\ntype = "barrier"\nwidth = 0.5\nheight = 1.0\n'
                   '[integrator]\nt_end = 2.0\nframes = 2\n')
    out = tmp_path / "s"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["norm_drift"] < 1e-9 and 0 < summary["T"] < 1 and summary["runtime"] >= 0
    assert summary["config"]["potential"]["x0"] == 0.0
    lines = (out / "frames.csv").read_text().splitlines()
    assert lines[0] == "x,t,w" and len(lines) == 1 + 3 * 256


def test_invalid_scenario_exits_2(tmp_path):
    path = write(tmp_path / "c.json", {"kind": "schrodinger", "grid": {"shape": [8]}, "potential": {"type": "moat"}})
    assert cli.main(["simulate", "--config", path, "--out", str(tmp_path / "o")]) == 2
