import numpy as np
import pytest

from isingq import dirac
from isingq import lattice as lat
from isingq.verification import demo_configs

SLIT, TUNNEL = demo_configs("tiny")


def free_line(**integrator):
    return {"grid": {"shape": [512], "spacing": 0.1},
            "packet": {"center": -5.0, "width": 1.5, "momentum": 1.2},
            "potential": {"type": "barrier", "height": 0.0},
            "integrator": {"t_end": 3.0, **integrator}}


def test_barrier_scenario_reproduces_tunneling_demo():
    demo = dirac.demo_tunneling(TUNNEL, keep_frames=False).metrics
    cfg = {"grid": {"shape": [TUNNEL["n"]], "spacing": 0.05},
           "packet": {"center": -100.0, "width": 10.0, "momentum": 2.0},
           "potential": {"type": "barrier", "x0": 0.0, "width": demo["barrier_width"], "height": demo["barrier_height"]},
           "integrator": {"t_end": demo["t_end"], "dt": TUNNEL["dt"], "frames": 0}}
    m = dirac.run_scenario(cfg).metrics
    assert abs(m["T"] - demo["T"]) < 1e-12
    assert abs(m["T"] - demo["T_analytic"]) / demo["T_analytic"] < 0.15
    assert m["norm_ok"]


def test_slit_scenario_reproduces_double_slit_demo():
    demo = dirac.demo_double_slit(SLIT, keep_frames=False).metrics
    cfg = {"grid": {"shape": list(SLIT["shape"]), "spacing": SLIT["spacing"]},
           "packet": {"center": [-8.0, 0.0], "width": [2.0, 4.0], "momentum": [5.0, 0.0]},
           "potential": {"type": "slit", "detector_x": 8.0},
           "integrator": {"t_end": 4.5, "dt": SLIT["dt"], "frames": 0}}
    res = dirac.run_scenario(cfg, keep_frames=False)
    assert abs(res.metrics["contrast"] - demo["contrast"]) < 1e-9
    assert res.metrics["n_maxima"] == demo["n_maxima"]
    assert res.metrics["contrast"] > 0.5


def test_free_scenario_matches_analytic_spreading():
    m = dirac.run_scenario(free_line()).metrics
    assert abs(m["mean"][0] - (-5.0 + 1.2 * 3.0)) < 1e-9
    assert abs(m["var"][0] - 1.5 ** 2 * (1 + (3.0 / (2 * 1.5 ** 2)) ** 2)) < 1e-9
    assert m["T"] + m["reflected"] <= 1.0 + 1e-12


def test_stiff_walls_conserve_energy_with_crank_nicolson():
    x = dirac.Grid((256,), 0.05).axis(0)
    walls = np.where(np.abs(x) > 4, 500.0, 0.0)
    cfg = {"grid": {"shape": [256], "spacing": 0.05}, "packet": {"center": 0.0, "width": 0.8, "momentum": 3.0},
           "potential": {"type": "custom-grid", "values": walls.tolist()},
           "integrator": {"t_end": 2.0, "scheme": "cn", "dt": 0.002}}
    m = dirac.run_scenario(cfg).metrics
    assert m["energy_drift"] < 1e-8
    assert m["norm_drift"] < 1e-12


def test_constant_custom_grid_matches_free_density():
    free = dirac.run_scenario(free_line(dt=0.01))
    const = dict(free_line(dt=0.01), potential={"type": "custom-grid", "values": [0.7] * 512})
    res = dirac.run_scenario(const)
    for (t1, w1), (t2, w2) in zip(free.frames, res.frames):
        assert t1 == t2 and np.abs(w1 - w2).max() < 1e-12


def test_well_scenario_and_frames():
    cfg = {"grid": {"shape": [32, 32], "spacing": 0.25},
           "packet": {"center": [0.0, 0.0], "width": 1.0},
           "potential": {"type": "well", "width": 3.0, "depth": 5.0},
           "integrator": {"t_end": 0.5, "frames": 4}}
    res = dirac.run_scenario(cfg)
    assert [round(t, 9) for t, _ in res.frames] == [0.0, 0.125, 0.25, 0.375, 0.5]
    assert res.metrics["norm_ok"] and "T" not in res.metrics
    v = dirac.scenario_potential(res.grid, res.metrics["config"]["potential"])
    assert v.min() == -5.0 and v[0, 0] == 0.0


@pytest.mark.parametrize("change, message", [
    ({"potential": {"type": "wall"}}, "potential.type"),
    ({"potential": {"type": "barrier", "hight": 1.0}}, "unknown potential fields"),
    ({"grid": {"spacing": 0.1}}, "grid.shape"),
    ({"packet": {"width": [1.0, 2.0]}}, "packet.width"),
    ({"integrator": {"scheme": "rk4"}}, "integrator.scheme"),
    ({"integrator": {"t_end": -1.0}}, "t_end"),
    ({"potential": {"type": "slit"}}, "2d"),
    ({"potential": {"type": "custom-grid", "values": [0.0, 1.0]}}, "shape"),
    ({"extra": {}}, "unknown scenario sections"),
])
def test_scenario_validation(change, message):
    with pytest.raises(lat.ConfigError, match=message):
        dirac.resolve_scenario({**free_line(), **change})


def test_overlapping_slits_rejected():
    cfg = {"grid": {"shape": [16, 16]}, "potential": {"type": "slit", "centers": [-0.2, 0.2]}}
    with pytest.raises(lat.ConfigError, match="overlap"):
        dirac.resolve_scenario(cfg)
