import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isingq import grassmann as gr

N = 5


def elements(n=N, max_terms=6):
    coeff = st.floats(-3, 3, allow_nan=False).filter(lambda c: abs(c) > 1e-3)
    return st.dictionaries(st.integers(0, (1 << n) - 1), coeff, max_size=max_terms).map(
        lambda d: gr.GrassmannElement(d, n)
    )


def homogeneous(n=N, parity=1):
    masks = [m for m in range(1 << n) if bin(m).count("1") % 2 == parity]
    coeff = st.floats(-3, 3, allow_nan=False)
    return st.dictionaries(st.sampled_from(masks), coeff, max_size=4).map(lambda d: gr.GrassmannElement(d, n))


def test_variables_anticommute_and_square_to_zero():
    a, b = gr.variable(0, 3), gr.variable(2, 3)
    assert (a * b + b * a).is_zero()
    assert (a * a).is_zero()
    assert (a * b).coefficient(0b101) == 1.0
    assert (b * a).coefficient(0b101) == -1.0


def test_berezin_of_full_product_is_one():
    for n in range(0, 7):
        assert gr.berezin_integrate(gr.full_product(n)) == 1.0
    assert gr.berezin_integrate(gr.one(3)) == 0.0


def test_partial_integration_in_order_matches_full():
    g = gr.GrassmannElement({0b1111: 2.0, 0b0111: 1.0}, 4)
    assert gr.integrate_variables(g, range(4)).coefficient(0) == gr.berezin_integrate(g)


def test_anticommutators_exhaustive_b4():
    n = 4
    for m in range(1 << n):
        g = gr.basis_element(m, n)
        for i in range(n):
            for j in range(n):
                ac = gr.derive(gr.multiply_variable(g, j), i) + gr.multiply_variable(gr.derive(g, i), j)
                expect = g if i == j else gr.zero(n)
                assert ac == expect


@pytest.mark.parametrize("n", range(1, 7))
def test_conjugate_basis_orthonormal(n):
    for t in range(1 << n):
        sigma, s = gr.conjugate_basis(t, n)
        conj = gr.GrassmannElement({sigma: float(s)}, n)
        for r in range(1 << n):
            v = gr.berezin_integrate(gr.multiply(conj, gr.basis_element(r, n)))
            assert v == (1.0 if r == t else 0.0)


def test_conjugate_overlap_equals_dot_product():
    rng = np.random.default_rng(1)
    n = 5
    p, q = rng.normal(size=32), rng.normal(size=32)
    p, q = p / np.linalg.norm(p), q / np.linalg.norm(q)
    gp, gq = gr.from_wavefunction(p), gr.from_wavefunction(q)
    assert math.isclose(gr.berezin_integrate(gr.conjugate(gp) * gq), float(p @ q), abs_tol=1e-14)


def test_variable_index_layout():
    v = gr.VariableIndex(site=2, species=3, flavor=2)
    b = v.linear(5)
    assert b == (5 + 2) * 4 + 2
    assert gr.VariableIndex.from_linear(b, 5) == v
    with pytest.raises(gr.GrassmannError):
        gr.VariableIndex(site=0, species=5).linear(1)
    with pytest.raises(gr.GrassmannError):
        gr.VariableIndex(site=3, species=1).linear(3)


def test_occupation_is_inverted_bitmask():
    assert gr.occupation(0b0101, 4) == [0, 1, 0, 1]
    assert gr.mask_from_occupation([0, 1, 0, 1]) == 0b0101


def test_cap_and_validation():
    with pytest.raises(gr.GrassmannError, match="sector"):
        gr.zero(gr.MAX_VARS + 1)
    with pytest.raises(gr.GrassmannError):
        gr.GrassmannElement({1 << 4: 1.0}, 4)
    with pytest.raises(gr.GrassmannError):
        gr.GrassmannElement({0: float("nan")}, 2)
    with pytest.raises(gr.GrassmannError):
        gr.one(3) + gr.one(4)
    with pytest.raises(gr.GrassmannError, match="normalised"):
        gr.from_wavefunction(np.ones(4))


def test_json_round_trip():
    g = gr.GrassmannElement({0b11: -0.5, 0b100: 0.25}, 3)
    assert gr.GrassmannElement.from_json(g.to_json(), 3) == g


def test_number_operator_counts_occupied():
    n = 4
    number = gr.number_operator(n)
    for m in range(1 << n):
        occ = sum(gr.occupation(m, n))
        assert number(gr.basis_element(m, n)) == occ * gr.basis_element(m, n)


def test_operator_matrix_detects_leakage():
    hop = gr.GrassmannOperator([(0, 1, 1.0)], 3)
    one_particle = [m for m in range(8) if bin(m).count("1") == 2]
    hop.matrix(one_particle, strict=True)
    with pytest.raises(gr.GrassmannError, match="leaves"):
        hop.matrix([0b101], strict=True)
    assert not hop.matrix([0b101]).any()


def test_integrate_product_matches_expanded_exponential():
    rng = np.random.default_rng(3)
    n = 6
    chi = [gr.variable(b, n) for b in range(3)]
    factors = []
    for i in range(3):
        b = gr.zero(n)
        for j in range(3, 6):
            b = b + float(rng.normal()) * gr.variable(j, n)
        factors.append(chi[i] * b)
    g = gr.full_product(n)
    total = gr.zero(n)
    for f in factors:
        total = total + f
    slow = gr.integrate_variables(gr.exp_apply(total, g), [0, 1, 2])
    assert gr.integrate_product(factors, g, [0, 1, 2]).allclose(slow, 1e-14)


@settings(max_examples=60, deadline=None)
@given(elements(), elements(), elements())
def test_product_associative(f, g, h):
    assert ((f * g) * h).allclose(f * (g * h), 1e-9)


@settings(max_examples=60, deadline=None)
@given(elements(), elements(), elements())
def test_product_distributive(f, g, h):
    assert (f * (g + h)).allclose(f * g + f * h, 1e-9)


@settings(max_examples=60, deadline=None)
@given(homogeneous(parity=1), homogeneous(parity=1))
def test_odd_elements_anticommute(f, g):
    assert (f * g + g * f).allclose(gr.zero(N), 1e-9)


@settings(max_examples=60, deadline=None)
@given(homogeneous(parity=0), elements())
def test_even_elements_central(f, g):
    assert (f * g).allclose(g * f, 1e-9)


@settings(max_examples=60, deadline=None)
@given(homogeneous(parity=1), elements(), st.integers(0, N - 1))
def test_derivative_graded_leibniz(f, g, b):
    lhs = gr.derive(f * g, b)
    rhs = gr.derive(f, b) * g - f * gr.derive(g, b)
    assert lhs.allclose(rhs, 1e-9)


@settings(max_examples=60, deadline=None)
@given(elements(), st.integers(0, N - 1))
def test_berezin_kills_derivatives(g, b):
    assert gr.berezin_integrate(gr.derive(g, b)) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=16, max_size=16).filter(
    lambda v: np.linalg.norm(v) > 1e-3))
def test_wavefunction_round_trip(v):
    q = np.asarray(v) / np.linalg.norm(v)
    g = gr.from_wavefunction(q)
    assert np.array_equal(gr.wavefunction_of(g), q)
    assert math.isclose(gr.berezin_integrate(gr.conjugate(g) * g), 1.0, abs_tol=1e-12)


@settings(max_examples=40, deadline=None)
@given(elements(n=4, max_terms=8))
def test_number_operator_commutes_with_hopping(g):
    op = gr.GrassmannOperator([(0, 2, 0.7), (2, 0, -0.7), (1, 3, 1.2), (3, 1, -1.2)], 4)
    assert gr.commutator(gr.number_operator(4), op, g).allclose(gr.zero(4), 1e-12)
