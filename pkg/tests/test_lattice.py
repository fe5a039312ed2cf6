import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from isingq import grassmann as gr
from isingq import lattice as lat
from isingq import sectors as sec

ALG = lat.build_spinor_algebra()


def test_spinor_algebra_identities():
    for t in ALG.T:
        assert np.array_equal(t, t.T)
        assert np.allclose(t @ t, np.eye(4), atol=1e-15)
    assert np.allclose(ALG.I_tilde, ALG.T[0] @ ALG.T[1] @ ALG.T[2], atol=1e-15)
    assert np.array_equal(ALG.I_tilde, -ALG.I_tilde.T)
    for mu in range(4):
        for nu in range(4):
            ac = ALG.gamma[mu] @ ALG.gamma[nu] + ALG.gamma[nu] @ ALG.gamma[mu]
            assert np.allclose(ac, 2 * ALG.eta[mu, nu] * np.eye(4), atol=1e-15)


def test_mass_matrix_antisymmetric_and_squares_to_minus_one():
    mm = ALG.mass_matrix
    assert np.array_equal(mm, -mm.T)
    assert np.allclose(mm @ mm, -np.eye(4), atol=1e-15)
    assert np.allclose(ALG.gamma_bar.real, 0, atol=1e-15)


def test_stencil_sums_to_identity():
    total = sum(lat.stencil(v) for v in lat.CORNERS)
    assert np.allclose(total, np.eye(4), atol=1e-15)
    with pytest.raises(ValueError):
        lat.stencil((1, 0, 1))


def test_difference_matrix_antisymmetric_and_exact_on_waves():
    geo = lat.LatticeGeometry.line(8, delta=0.5)
    d = lat.difference_matrix(geo, 3)
    assert abs(d + d.T).max() == 0
    x = geo.positions()[:, 2]
    k = 2 * np.pi / (8 * geo.spacing)
    f = np.sin(k * x)
    assert np.allclose(d @ f, np.sin(k * geo.spacing) / geo.spacing * np.cos(k * x), atol=1e-14)


def test_two_site_axis_has_no_derivative():
    geo = lat.LatticeGeometry((2, 1, 1))
    assert lat.difference_matrix(geo, 1).nnz == 0
    assert geo.active_axes == ()


def test_geometry_validation():
    with pytest.raises(lat.ConfigError):
        lat.LatticeGeometry.cubic(3)
    with pytest.raises(lat.ConfigError):
        lat.LatticeGeometry((2, 2, 2), boundary="open")
    with pytest.raises(lat.ConfigError):
        lat.LatticeGeometry((2, 2, 2), delta=0)
    with pytest.raises(lat.ConfigError):
        lat.ModelParams(Ns=4, m=1.0)
    with pytest.raises(lat.ConfigError):
        lat.ModelParams(Ns=6)


def test_site_index_is_lexicographic_and_periodic():
    geo = lat.LatticeGeometry((2, 3, 4))
    coords = geo.site_coords()
    assert [geo.site_index(c) for c in coords] == list(range(24))
    assert geo.site_index((2, 3, 4)) == 0
    assert geo.site_index((-1, 0, 0)) == geo.site_index((1, 0, 0))


@pytest.mark.parametrize(
    "params, geo",
    [
        (lat.ModelParams(Ns=4), lat.LatticeGeometry.line(3)),
        (lat.ModelParams(Ns=8, m=0.6, e=0.8, A0=(0.1, -0.4)), lat.LatticeGeometry.line(2)),
        (lat.ModelParams(Ns=8, m=0.3, e=0.5, A0=0.2, Ak=(0.0, 0.0, (0.3, 0.1))), lat.LatticeGeometry.line(2)),
    ],
)
def test_sector_generator_equals_grassmann_projection(params, geo):
    b = geo.n_vars(params.Ns)
    op = lat.build_generator_grassmann(params, geo)
    for m in range(b + 1) if b <= 12 else (1, 2, b // 2, b - 1):
        gen = lat.build_generator_sector(params, geo, m)
        oracle = op.matrix(gen.basis.masks(), strict=True)
        assert np.abs(gen.matrix.toarray() - oracle).max(initial=0.0) <= 1e-14
        assert gen.antisymmetry_defect() == 0.0


def test_oracle_cap():
    with pytest.raises(lat.OracleTooLarge):
        lat.build_generator_grassmann(lat.ModelParams(Ns=8), lat.LatticeGeometry.line(4))


@settings(max_examples=25, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2),
       st.lists(st.floats(-1, 1), min_size=3, max_size=3),
       st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_one_particle_operator_antisymmetric(m, e, a0, a3):
    geo = lat.LatticeGeometry.line(3)
    params = lat.ModelParams(Ns=8, m=m, e=e, A0=a0, Ak=(0.0, 0.0, a3))
    a = lat.one_particle_operator(params, geo)
    assert abs(a + a.T).max() <= 1e-15


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(0.1, 3.0), st.sampled_from([(2, 2, 2), (1, 3, 2), (3, 3, 1)]))
def test_two_step_transfer_orthogonal(delta, eps, shape):
    geo = lat.LatticeGeometry(shape, delta, eps)
    r = lat.two_step_transfer(geo)
    assert np.abs((r.T @ r - sp.identity(r.shape[0])).toarray()).max() <= 1e-12


def test_coupling_has_unit_determinant():
    for shape in ((2, 2, 2), (1, 1, 3)):
        for parity in ("even", "odd"):
            w = lat.stencil_coupling(lat.LatticeGeometry(shape, parity=parity)).toarray()
            assert abs(np.linalg.det(w) - 1) < 1e-12


@pytest.mark.parametrize("shape", [(1, 1, 2), (1, 1, 3), (1, 2, 1), (2, 1, 1)])
def test_transfer_map_matches_berezin_oracle(shape):
    geo = lat.LatticeGeometry(shape, 0.5)
    o1, o2 = lat.grassmann_transfer_oracle(geo)
    assert np.abs(o1 - lat.build_one_particle_transfer(geo).toarray()).max() <= 1e-12
    assert np.abs(o2 @ o1 - lat.two_step_transfer(geo).toarray()).max() <= 1e-12


def test_transfer_oracle_cap():
    with pytest.raises(lat.OracleTooLarge):
        lat.grassmann_transfer_oracle(lat.LatticeGeometry((2, 2, 2)))


def test_number_conserved_by_generator():
    params = lat.ModelParams(Ns=8, m=0.5, e=0.3, A0=0.1)
    geo = lat.LatticeGeometry.line(2)
    op = lat.build_generator_grassmann(params, geo)
    b = geo.n_vars(8)
    rng = np.random.default_rng(0)
    g = gr.GrassmannElement({int(k): 1.0 for k in rng.integers(0, 1 << b, 30)}, b)
    assert gr.commutator(gr.number_operator(b), op, g).max_abs() <= 1e-12


def test_config_expression_and_roundtrip(tmp_path):
    cfg = {"shape": [1, 1, 4], "delta": 0.5, "Ns": 8, "m": 1.0, "e": 0.5,
           "A": {"A0": "0.1 * x3", "Ak": [0.0, 0.0, [0.1, 0.2, 0.3, 0.4]]}}
    path = tmp_path / "m.json"
    path.write_text(json.dumps(cfg))
    params, geo = lat.load_model_config(path)
    a0, ak = params.potentials(geo)
    assert np.allclose(a0, 0.1 * geo.positions()[:, 2])
    assert np.allclose(ak[2], [0.1, 0.2, 0.3, 0.4])
    toml = tmp_path / "m.toml"
    toml.write_text('L = 4\nNs = 4\n')
    params, geo = lat.load_model_config(toml)
    assert geo.shape == (2, 2, 2) and params.Ns == 4


def test_config_errors(tmp_path):
    with pytest.raises(lat.ConfigError):
        lat.load_model_config({"Ns": 4})
    with pytest.raises(lat.ConfigError):
        lat.load_model_config({"shape": [1, 1, 4], "Ns": 8, "A": {"A0": [1.0, 2.0]}})
    bad = tmp_path / "bad.toml"
    bad.write_text("L = = 4")
    with pytest.raises(lat.ConfigError, match="TOML"):
        lat.load_model_config(bad)


def test_coo_round_trip(tmp_path):
    params = lat.ModelParams(Ns=8, m=0.7, e=0.2, A0=0.3)
    geo = lat.LatticeGeometry.line(3)
    k = lat.build_generator_sector(params, geo, 2).matrix
    path = tmp_path / "k.coo"
    lat.write_coo(k, path)
    back = lat.read_coo(path, k.shape)
    assert abs(back - k).max() == 0


def test_vacua_static_under_generator():
    params = lat.ModelParams(Ns=4)
    geo = lat.LatticeGeometry.line(3)
    b = geo.n_vars(4)
    for m in (0, b):
        k = sec.second_quantize(lat.one_particle_operator(params, geo), sec.sector_basis(b, m))
        assert k.nnz == 0
