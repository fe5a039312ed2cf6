import numpy as np
import pytest

from isingq import dirac
from isingq import lattice as lat
from isingq.verification import demo_configs

SLIT, TUNNEL = demo_configs("tiny")


@pytest.fixture(scope="module")
def two_slits():
    return dirac.demo_double_slit(SLIT, keep_frames=True)


def test_double_slit_fringes(two_slits):
    m = two_slits.metrics
    assert m["contrast"] > 0.5
    assert m["n_maxima"] >= 3
    assert m["symmetric_slits"]
    assert m["density_asymmetry"] < 1e-10
    assert m["norm_drift"] < 1e-9
    assert two_slits.frames


def test_single_slit_has_one_lobe():
    m = dirac.demo_double_slit({**SLIT, "slit_centers": (1.5,)}, keep_frames=False).metrics
    assert m["n_maxima"] == 1
    assert not m["symmetric_slits"]


def test_double_slit_config_errors():
    with pytest.raises(lat.ConfigError, match="overlap"):
        dirac.DoubleSlitConfig(slit_centers=(-0.2, 0.2), slit_width=1.0)
    with pytest.raises(lat.ConfigError, match="unknown"):
        dirac.demo_double_slit({"slits": 2})
    with pytest.raises(lat.ConfigError):
        dirac.DoubleSlitConfig(detector_x=-1.0)


def test_fringe_report_on_synthetic_profile():
    y = np.linspace(-10, 10, 2001)
    i = np.exp(-y ** 2 / 20) * np.cos(2 * y) ** 2
    r = dirac.fringe_report(y, i)
    assert r["contrast"] > 0.99
    assert abs(r["central_max_y"]) < 1e-9
    assert r["n_maxima"] >= 5
    flat = dirac.fringe_report(y, np.exp(-y ** 2 / 20))
    assert flat["n_maxima"] == 1


def test_tunneling_close_to_analytic():
    m = dirac.demo_tunneling(TUNNEL, keep_frames=False).metrics
    assert m["relative_error"] < 0.15
    inside = 1 - m["T"] - m["reflected"]
    assert 0 <= inside < 1e-4
    assert m["norm_drift"] < 1e-9


def test_free_packet_fully_transmitted():
    m = dirac.demo_tunneling({**TUNNEL, "energy_ratio": 0.0}, keep_frames=False).metrics
    assert abs(m["T"] - 1) < 1e-6
    assert m["T_analytic"] == 1.0


def test_transmission_falls_with_barrier_width():
    ts = [dirac.demo_tunneling({**TUNNEL, "kappa_w": kw}, keep_frames=False).metrics["T"] for kw in (1.0, 2.0, 3.0)]
    assert ts[0] > ts[1] > ts[2]


def test_density_frames_csv(tmp_path, two_slits):
    path = tmp_path / "frames.csv"
    dirac.write_density_frames(path, two_slits.grid, two_slits.frames[:1], stride=16)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y,t,w"
    nx, ny = (n // 16 for n in two_slits.grid.shape)
    assert len(lines) == 1 + nx * ny
