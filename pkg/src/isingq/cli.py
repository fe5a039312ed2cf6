"""Command-line front-end: ``isingq verify | simulate | demo``.

Exit codes: 0 success, 1 a check failed, 2 invalid configuration.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dirac, ensemble
from . import lattice as lat
from . import sectors as sec
from . import verification

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def _limit_threads():
    n = os.environ.get("ISINGQ_THREADS")
    if not n:
        return None
    try:
        count = int(n)
    except ValueError:
        raise lat.ConfigError(f"ISINGQ_THREADS must be a positive integer, got {n!r}") from None
    if count < 1:
        raise lat.ConfigError(f"ISINGQ_THREADS must be a positive integer, got {n!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=count)


# --- simulate ------------------------------------------------------------------------


@dataclass(frozen=True)
class TwoStateRun:
    omega: float = 1.0
    alpha: float = 0.0
    t_end: float = 20.0
    samples: int = 2001
    threshold: float = 1e-6

    def __post_init__(self):
        if self.samples < 3:
            raise lat.ConfigError("two-state: samples must be at least 3")
        if not self.t_end > 0:
            raise lat.ConfigError("two-state: t_end must be positive")


def run_two_state(cfg: dict, out: Path, seed: int) -> dict:
    run = dirac._from_dict(TwoStateRun, cfg)
    model = ensemble.TwoStateModel(run.omega)
    q0 = np.array([math.cos(run.alpha), -math.sin(run.alpha)])
    times = np.linspace(0.0, run.t_end, run.samples)
    traj = ensemble.trajectory(q0, model.generator(), times)
    report = ensemble.track_signs(traj, times, run.threshold,
                                  refine=lambda t: ensemble.evolve(q0, model.generator(), t))
    with open(out / "trajectory.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "q0", "q1", "p0", "p1", "s0", "s1"])
        s = ensemble.signs_of(traj)
        for t, q, sg in zip(times, traj, s):
            w.writerow([_fmt(t), _fmt(q[0]), _fmt(q[1]), _fmt(q[0] ** 2), _fmt(q[1] ** 2), int(sg[0]), int(sg[1])])
    (out / "signs.json").write_text(report.to_json() + "\n")
    err = float(np.abs(traj[:, 0] ** 2 - model.p0(q0, times)).max())
    h = times[1] - times[0]
    return {"kind": "two-state", "config": dirac._config_dict(run), "p0_max_error": err,
            "second_order_residual": ensemble.second_order_check(traj[:, 0] ** 2, h, run.omega),
            "n_flips": len(report.flips), "signs_ok": report.ok,
            "norm_drift": float(np.abs(np.sum(traj ** 2, axis=1) - 1).max())}


def _initial_amplitudes(cfg: dict, params, geometry, rng) -> np.ndarray:
    init = dict(cfg.get("initial", {"type": "gaussian"}))
    kind = init.pop("type", "gaussian")
    n = geometry.n_vars(params.Ns)
    if kind == "random":
        if init:
            raise lat.ConfigError(f"initial: unexpected fields {sorted(init)} for random state")
        q = rng.normal(size=n)
        return q / np.linalg.norm(q)
    if kind != "gaussian":
        raise lat.ConfigError(f"initial.type must be 'gaussian' or 'random', got {kind!r}")
    extent = geometry.spacing * np.array(geometry.shape)
    center = init.pop("center", (extent / 2).tolist())
    width = float(init.pop("width", 2.0 * geometry.spacing))
    k0 = init.pop("k0", [0.0, 0.0, 0.0])
    spinor = init.pop("spinor", [1.0, 0.0, 0.0, 0.0])
    if init:
        raise lat.ConfigError(f"initial: unknown fields {sorted(init)}")
    if len(spinor) != 4 or len(k0) != 3 or len(center) != 3:
        raise lat.ConfigError("initial: spinor needs 4 entries, k0 and center need 3")
    field = dirac.gaussian_dirac_packet(geometry, center, width, k0, spinor)
    q1, q2 = field.real_parts()
    q = np.concatenate([q1, q2]) if params.Ns == 8 else q1
    norm = np.linalg.norm(q)
    if norm == 0:
        raise lat.ConfigError("initial: packet has zero real part for Ns = 4; change spinor or k0")
    return q / norm


def run_sector(cfg: dict, out: Path, seed: int) -> dict:
    cfg = dict(cfg)
    t_end = float(cfg.pop("t_end", 1.0))
    samples = int(cfg.pop("samples", 11))
    particles = int(cfg.pop("particles", 1))
    if particles != 1:
        raise lat.ConfigError("sector simulation: only the one-particle sector (particles = 1) has a density export")
    if samples < 1:
        raise lat.ConfigError("sector simulation: samples must be >= 1")
    init = cfg.pop("initial", {"type": "gaussian"})
    params, geometry = lat.load_model_config(cfg)
    rng = np.random.default_rng(seed)
    q = _initial_amplitudes({"initial": init}, params, geometry, rng)
    gen = lat.build_generator_sector(params, geometry, 1)
    vac = sec.empty_vacuum(gen.basis.n_vars)
    state, basis = sec.one_particle_state(q, vac)
    times = np.linspace(0.0, t_end, samples)
    traj = ensemble.trajectory(state, gen.matrix, times)
    n_sites = geometry.n_sites
    obs = [sec.local_number(basis, s, n_sites) for s in range(n_sites)]
    pos = geometry.positions()
    worst = 0.0
    with open(out / "density.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "site", "x1", "x2", "x3", "N_classical", "N_quantum"])
        for t, v in zip(times, traj):
            for s, o in enumerate(obs):
                c, qv = sec.expect(o, v)
                worst = max(worst, abs(c - qv))
                w.writerow([_fmt(t), s, _fmt(pos[s, 0]), _fmt(pos[s, 1]), _fmt(pos[s, 2]), _fmt(c), _fmt(qv)])
    a0, ak = params.potentials(geometry)
    resolved = {"geometry": geometry.to_dict(), "Ns": params.Ns, "particles": 1, "mass": params.m,
                "e": params.e, "A0": a0, "Ak": ak, "t_end": t_end, "samples": samples, "initial": init}
    return {"kind": "sector", "config": resolved, "sector_dim": gen.dim,
            "antisymmetry_defect": gen.antisymmetry_defect(),
            "norm_drift": float(np.abs(np.linalg.norm(traj, axis=1) - 1).max()),
            "two_rule_max_difference": worst}


def run_crosscheck(cfg: dict, out: Path, seed: int) -> dict:
    cfg = dict(cfg)
    n_sites = int(cfg.pop("n_sites", 16))
    t = float(cfg.pop("t", 1.0))
    trials = int(cfg.pop("trials", 5))
    spec = dirac.HamiltonianSpec(m=float(cfg.pop("m", 0.7)), e=float(cfg.pop("e", 0.5)))
    delta = float(cfg.pop("delta", 1.0))
    a0 = cfg.pop("A0", f"0.4*np.sin(2*pi*x3/{n_sites * 2 * delta!r})")
    if cfg:
        raise lat.ConfigError(f"crosscheck: unknown fields {sorted(cfg)}")
    if n_sites < 1 or trials < 1:
        raise lat.ConfigError("crosscheck: n_sites and trials must be positive")
    grid = lat.LatticeGeometry.line(n_sites, delta=delta)
    a0_vals = lat._parse_field(a0, grid, "A0")
    spec = dirac.HamiltonianSpec(m=spec.m, e=spec.e, A0=a0_vals)
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(trials):
        phi = rng.normal(size=(n_sites, 4)) + 1j * rng.normal(size=(n_sites, 4))
        res = dirac.crosscheck_sector(dirac.DiracField(phi / np.linalg.norm(phi), grid), spec, t)
        rows.append(res)
    with open(out / "crosscheck.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "max_deviation", "density_deviation"])
        for k, r in enumerate(rows):
            w.writerow([k, _fmt(r["max_deviation"]), _fmt(r["density_deviation"])])
    return {"kind": "crosscheck",
            "config": {"n_sites": n_sites, "t": t, "trials": trials, "m": spec.m, "e": spec.e,
                       "A0": a0 if isinstance(a0, str) else a0_vals, "delta": delta},
            "max_deviation": max(r["max_deviation"] for r in rows),
            "sector_dim": rows[0]["sector_dim"]}


def run_schrodinger(cfg: dict, out: Path, seed: int) -> dict:
    conf = dirac.resolve_scenario(cfg)
    t0 = time.perf_counter()
    res = dirac.run_scenario(conf)
    runtime = time.perf_counter() - t0
    dirac.write_density_frames(out / "frames.csv", res.grid, res.frames)
    if res.profile is not None:
        _write_profile(out / "profile.csv", *res.profile)
    return {"kind": "schrodinger", **res.metrics, "runtime": runtime}


SIMULATIONS = {"two-state": run_two_state, "sector": run_sector, "crosscheck": run_crosscheck,
               "schrodinger": run_schrodinger}


def cmd_simulate(config_path, out_dir, seed: int = 0) -> int:
    cfg = lat.read_config_file(config_path)
    if not isinstance(cfg, dict):
        raise lat.ConfigError("config must be a mapping")
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    if kind not in SIMULATIONS:
        raise lat.ConfigError(f"kind must be one of {', '.join(SIMULATIONS)}, got {kind!r}")
    seed = int(cfg.pop("seed", seed))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = SIMULATIONS[kind](cfg, out, seed)
    summary["seed"] = seed
    write_json(out / "summary.json", summary)
    return EXIT_OK if summary.get("norm_ok", True) else EXIT_FAIL


def _write_profile(path: Path, y, intensity) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y", "intensity"])
        for a, b in zip(y, intensity):
            w.writerow([_fmt(a), _fmt(b)])


# --- demos ---------------------------------------------------------------------------


def cmd_demo(name: str, config_path, out_dir, seed: int = 0) -> int:
    cfg = lat.read_config_file(config_path) if config_path else {}
    out = Path(out_dir)
    if name == "two-state":
        out.mkdir(parents=True, exist_ok=True)
        summary = run_two_state(cfg, out, seed)
        summary["seed"] = seed
        write_json(out / "summary.json", summary)
        write_json(out / "metrics.json", {"p0_max_error": summary["p0_max_error"],
                                          "signs_ok": summary["signs_ok"]})
        return EXIT_OK if summary["p0_max_error"] < 1e-10 and summary["signs_ok"] else EXIT_FAIL
    if name == "double-slit":
        conf = dirac._from_dict(dirac.DoubleSlitConfig, cfg)
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        res = dirac.demo_double_slit(conf)
        runtime = time.perf_counter() - t0
        dirac.write_density_frames(out / "frames.csv", res.grid, res.frames, conf.frame_stride)
        _write_profile(out / "profile.csv", *res.profile)
        write_json(out / "metrics.json", res.metrics)
        write_json(out / "summary.json", {"kind": "double-slit", "seed": seed, **res.metrics, "runtime": runtime})
        passed = res.metrics["contrast"] > 0.5 and res.metrics["norm_drift"] < 1e-9
        return EXIT_OK if passed else EXIT_FAIL
    if name == "tunneling":
        conf = dirac._from_dict(dirac.TunnelingConfig, cfg)
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        res = dirac.demo_tunneling(conf)
        runtime = time.perf_counter() - t0
        stride = max(1, conf.n // 2048)
        dirac.write_density_frames(out / "frames.csv", res.grid, res.frames, stride)
        write_json(out / "metrics.json", res.metrics)
        write_json(out / "summary.json", {"kind": "tunneling", "seed": seed, **res.metrics, "runtime": runtime})
        return EXIT_OK if res.metrics["norm_drift"] < 1e-9 else EXIT_FAIL
    raise lat.ConfigError(f"unknown demo {name!r}; choose double-slit, tunneling or two-state")


# --- verify --------------------------------------------------------------------------


def cmd_verify(suite: str, geometry: str, seed: int = 0, out=None) -> int:
    if suite != "all" and suite not in verification.SUITES:
        raise lat.ConfigError(f"unknown suite {suite!r}; choose from {', '.join(verification.SUITES)} or all")
    report = verification.run(suite, geometry, seed)
    text = json.dumps(_jsonable(report), indent=2)
    if out:
        Path(out).write_text(text + "\n")
    print(text)
    for s in report["suites"]:
        for c in s["checks"]:
            mark = "PASS" if c["passed"] else "FAIL"
            print(f"{mark} [{s['suite']}] {c['name']}: {c['value']} {c['comparator']} {c['tolerance']}", file=sys.stderr)
    return EXIT_OK if report["passed"] else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isingq", description="Fermions from classical statistics: checks, runs and demos.")
    sub = p.add_subparsers(dest="command", required=True)
    v = sub.add_parser("verify", help="run invariant suites")
    v.add_argument("--suite", default="all")
    v.add_argument("--geometry", default="tiny", choices=verification.GEOMETRIES)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", help="also write the JSON report to this file")
    s = sub.add_parser("simulate", help="run a configured simulation")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    d = sub.add_parser("demo", help="run a built-in demo")
    d.add_argument("name")
    d.add_argument("--config")
    d.add_argument("--out", required=True)
    d.add_argument("--seed", type=int, default=0)
    return p


def _dispatch(args) -> int:
    if args.command == "verify":
        return cmd_verify(args.suite, args.geometry, args.seed, args.out)
    if args.command == "simulate":
        return cmd_simulate(args.config, args.out, args.seed)
    return cmd_demo(args.name, args.config, args.out, args.seed)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        limiter = _limit_threads()
        if limiter is None:
            return _dispatch(args)
        with limiter:
            return _dispatch(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
