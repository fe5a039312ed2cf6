"""Exact sparse real Grassmann algebra with Berezin calculus.

An element is stored as a map from basis bitmasks to real coefficients.  Bit
``b`` set in a mask means the generator ``psi_b`` is present in the product,
and every basis product is kept in ascending variable order.  All reordering
signs are computed relative to that canonical order.

The occupation-number convention is inverted with respect to the bitmask: a
variable that appears in a basis product is *empty* (``n = 0``), a missing
variable is *occupied* (``n = 1``).  Consequently ``derive`` acts as a creation
operator and left multiplication by ``psi_b`` as an annihilation operator.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

MAX_VARS = 24


class GrassmannError(ValueError):
    pass


@dataclass(frozen=True)
class VariableIndex:
    """Address of one Grassmann generator ``psi_{species,flavor}(site)``.

    ``species`` runs over 1..4 and ``flavor`` over 1..2 as in physics notation;
    ``site`` is the 0-based lexicographic site id.  The linear index is
    flavor-major, then site, then species.
    """

    site: int
    species: int
    flavor: int = 1

    def linear(self, n_sites: int) -> int:
        if not 1 <= self.species <= 4:
            raise GrassmannError(f"species must be in 1..4, got {self.species}")
        if self.flavor not in (1, 2):
            raise GrassmannError(f"flavor must be 1 or 2, got {self.flavor}")
        if not 0 <= self.site < n_sites:
            raise GrassmannError(f"site {self.site} outside [0, {n_sites})")
        return ((self.flavor - 1) * n_sites + self.site) * 4 + (self.species - 1)

    @classmethod
    def from_linear(cls, b: int, n_sites: int) -> "VariableIndex":
        flavor, rest = divmod(b, 4 * n_sites)
        site, species = divmod(rest, 4)
        if flavor > 1 or b < 0:
            raise GrassmannError(f"linear index {b} out of range for {n_sites} sites")
        return cls(site=site, species=species + 1, flavor=flavor + 1)


def occupation(mask: int, n_vars: int) -> list[int]:
    """Occupation numbers of the state ``tau`` labelled by a basis mask."""
    return [0 if (mask >> b) & 1 else 1 for b in range(n_vars)]


def mask_from_occupation(n: Iterable[int]) -> int:
    mask = 0
    for b, nb in enumerate(n):
        if nb not in (0, 1):
            raise GrassmannError(f"occupation numbers must be 0 or 1, got {nb}")
        if nb == 0:
            mask |= 1 << b
    return mask


def reorder_sign(a: int, b: int) -> int:
    """Sign of bringing ``mono(a) * mono(b)`` into canonical order.

    Returns 0 when the monomials share a variable.
    """
    if a & b:
        return 0
    swaps = 0
    rest = b
    while rest:
        low = rest & -rest
        j = low.bit_length() - 1
        swaps += (a >> (j + 1)).bit_count()
        rest ^= low
    return -1 if swaps & 1 else 1


def _below(mask: int, b: int) -> int:
    return (mask & ((1 << b) - 1)).bit_count()


class GrassmannElement:
    """Immutable element of the real Grassmann algebra over ``n_vars`` generators."""

    __slots__ = ("_terms", "_n")

    def __init__(self, terms: Mapping[int, float], n_vars: int):
        if not 0 <= n_vars <= MAX_VARS:
            raise GrassmannError(
                f"full-algebra operations are capped at {MAX_VARS} variables, got {n_vars}; "
                "use the sector representation for larger systems"
            )
        top = 1 << n_vars
        clean = {}
        for mask, c in terms.items():
            mask = int(mask)
            if not 0 <= mask < top:
                raise GrassmannError(f"mask {mask:#x} outside algebra of {n_vars} variables")
            c = float(c)
            if not math.isfinite(c):
                raise GrassmannError("coefficients must be finite")
            if c != 0.0:
                clean[mask] = c
        self._terms = clean
        self._n = n_vars

    @property
    def n_vars(self) -> int:
        return self._n

    @property
    def terms(self) -> dict[int, float]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def __len__(self) -> int:
        return len(self._terms)

    def coefficient(self, mask: int) -> float:
        return self._terms.get(mask, 0.0)

    def is_zero(self) -> bool:
        return not self._terms

    def grades(self) -> set[int]:
        return {m.bit_count() for m in self._terms}

    def parity(self) -> int:
        """+1 / -1 for homogeneous even / odd elements."""
        ps = {g & 1 for g in self.grades()}
        if len(ps) > 1:
            raise GrassmannError("element is not of definite parity")
        return -1 if ps == {1} else 1

    def _check(self, other: "GrassmannElement") -> None:
        if not isinstance(other, GrassmannElement):
            raise TypeError(f"expected GrassmannElement, got {type(other).__name__}")
        if other._n != self._n:
            raise GrassmannError(f"variable sets differ: {self._n} vs {other._n} generators")

    def __add__(self, other: "GrassmannElement") -> "GrassmannElement":
        self._check(other)
        out = dict(self._terms)
        for m, c in other._terms.items():
            out[m] = out.get(m, 0.0) + c
        return GrassmannElement(out, self._n)

    def __neg__(self) -> "GrassmannElement":
        return GrassmannElement({m: -c for m, c in self._terms.items()}, self._n)

    def __sub__(self, other: "GrassmannElement") -> "GrassmannElement":
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, GrassmannElement):
            return multiply(self, other)
        return GrassmannElement({m: c * float(other) for m, c in self._terms.items()}, self._n)

    def __rmul__(self, other):
        return GrassmannElement({m: c * float(other) for m, c in self._terms.items()}, self._n)

    def __truediv__(self, other):
        return self * (1.0 / float(other))

    def __eq__(self, other) -> bool:
        if not isinstance(other, GrassmannElement):
            return NotImplemented
        return self._n == other._n and self._terms == other._terms

    def __hash__(self):
        return hash((self._n, frozenset(self._terms.items())))

    def allclose(self, other: "GrassmannElement", atol: float = 1e-12) -> bool:
        self._check(other)
        keys = self._terms.keys() | other._terms.keys()
        return all(abs(self.coefficient(k) - other.coefficient(k)) <= atol for k in keys)

    def max_abs(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def __repr__(self) -> str:
        if not self._terms:
            return f"GrassmannElement(0, n_vars={self._n})"
        parts = []
        for m in sorted(self._terms):
            names = "".join(f"ψ{b}" for b in range(self._n) if (m >> b) & 1) or "1"
            parts.append(f"{self._terms[m]:+g}·{names}")
        return " ".join(parts)

    def to_json(self) -> str:
        """Debug dump: list of ``{"bits": hex, "coeff": value}`` in ascending mask order."""
        return json.dumps(
            [{"bits": hex(m), "coeff": self._terms[m]} for m in sorted(self._terms)]
        )

    @classmethod
    def from_json(cls, text: str, n_vars: int) -> "GrassmannElement":
        return cls({int(t["bits"], 16): float(t["coeff"]) for t in json.loads(text)}, n_vars)


def zero(n_vars: int) -> GrassmannElement:
    return GrassmannElement({}, n_vars)


def one(n_vars: int) -> GrassmannElement:
    return GrassmannElement({0: 1.0}, n_vars)


def variable(b: int, n_vars: int) -> GrassmannElement:
    if not 0 <= b < n_vars:
        raise GrassmannError(f"variable index {b} out of range [0, {n_vars})")
    return GrassmannElement({1 << b: 1.0}, n_vars)


def basis_element(mask: int, n_vars: int) -> GrassmannElement:
    return GrassmannElement({mask: 1.0}, n_vars)


def full_product(n_vars: int) -> GrassmannElement:
    """``|0>``: product of all generators in canonical order (the empty state)."""
    return GrassmannElement({(1 << n_vars) - 1: 1.0}, n_vars)


def multiply(g: GrassmannElement, h: GrassmannElement) -> GrassmannElement:
    g._check(h)
    out: dict[int, float] = {}
    for a, ca in g._terms.items():
        for b, cb in h._terms.items():
            s = reorder_sign(a, b)
            if s:
                m = a | b
                out[m] = out.get(m, 0.0) + s * ca * cb
    return GrassmannElement(out, g._n)


def derive(g: GrassmannElement, b: int) -> GrassmannElement:
    """Left derivative ``d/dpsi_b``; also the creation operator ``a^dagger_b``."""
    if not 0 <= b < g.n_vars:
        raise GrassmannError(f"variable index {b} out of range [0, {g.n_vars})")
    bit = 1 << b
    out = {}
    for m, c in g._terms.items():
        if m & bit:
            out[m ^ bit] = -c if _below(m, b) & 1 else c
    return GrassmannElement(out, g.n_vars)


def multiply_variable(g: GrassmannElement, b: int) -> GrassmannElement:
    """Left multiplication ``psi_b * g``; the annihilation operator ``a_b``."""
    if not 0 <= b < g.n_vars:
        raise GrassmannError(f"variable index {b} out of range [0, {g.n_vars})")
    bit = 1 << b
    out = {}
    for m, c in g._terms.items():
        if not m & bit:
            out[m | bit] = -c if _below(m, b) & 1 else c
    return GrassmannElement(out, g.n_vars)


def berezin_integrate(g: GrassmannElement) -> float:
    """Coefficient of ``|0>``; the measure is normalised so that the integral of ``|0>`` is 1."""
    return g.coefficient((1 << g.n_vars) - 1)


def integrate_variables(g: GrassmannElement, variables: Iterable[int]) -> GrassmannElement:
    """Partial Berezin integral ``int d psi_{v_k} ... d psi_{v_1} g``.

    The innermost differential is the first entry of ``variables``; integrating
    over all variables in ascending order reproduces ``berezin_integrate``.
    """
    for b in variables:
        g = derive(g, b)
    return g


def conjugate_basis(mask: int, n_vars: int) -> tuple[int, int]:
    """Complement mask and the sign with ``sign * mono(sigma) * mono(mask) = |0>``."""
    full = (1 << n_vars) - 1
    if not 0 <= mask <= full:
        raise GrassmannError(f"mask {mask:#x} outside algebra of {n_vars} variables")
    sigma = full ^ mask
    return sigma, reorder_sign(sigma, mask)


def conjugate(g: GrassmannElement) -> GrassmannElement:
    """``g~ = sum_tau q_tau g~_tau``."""
    out = {}
    for m, c in g.items():
        sigma, s = conjugate_basis(m, g.n_vars)
        out[sigma] = s * c
    return GrassmannElement(out, g.n_vars)


def wavefunction_of(g: GrassmannElement) -> np.ndarray:
    """Dense coefficient vector ``q`` indexed by basis mask."""
    q = np.zeros(1 << g.n_vars)
    for m, c in g.items():
        q[m] = c
    return q


def from_wavefunction(q, n_vars: int | None = None, atol: float = 1e-9) -> GrassmannElement:
    q = np.asarray(q, dtype=float)
    if n_vars is None:
        n_vars = int(q.size).bit_length() - 1
    if q.shape != (1 << n_vars,):
        raise GrassmannError(f"expected {1 << n_vars} amplitudes, got shape {q.shape}")
    norm2 = float(q @ q)
    if abs(norm2 - 1.0) > atol:
        raise GrassmannError(f"wave function not normalised: sum q^2 = {norm2:.12g}")
    idx = np.flatnonzero(q)
    return GrassmannElement(dict(zip(idx.tolist(), q[idx].tolist())), n_vars)


def exp_apply(x: GrassmannElement, g: GrassmannElement) -> GrassmannElement:
    """``exp(x) * g`` for an even element ``x`` by the terminating power series."""
    if x.grades() and x.parity() != 1:
        raise GrassmannError("exp_apply needs an even element")
    total = g
    term = g
    k = 0
    while not term.is_zero():
        k += 1
        term = multiply(x, term) / k
        total = total + term
        if k > g.n_vars + 1:
            raise GrassmannError("power series failed to terminate")
    return total


def integrate_product(factors, g: GrassmannElement, variables: Iterable[int]) -> GrassmannElement:
    """``int D[variables] prod_k (1 + x_k) g`` for commuting even nilpotent ``x_k``.

    With ``x_k x_k = 0`` this equals the integral of ``exp(sum_k x_k) g``.
    Terms missing an integration variable that no later factor can supply are
    dropped while the product is built, which keeps dense couplings tractable.
    """
    variables = list(variables)
    need = sum(1 << b for b in set(variables))
    factors = list(factors)
    reach = [0] * (len(factors) + 1)
    for k in range(len(factors) - 1, -1, -1):
        acc = reach[k + 1]
        for m, _ in factors[k].items():
            acc |= m
        reach[k] = acc
    cur = g
    for k, x in enumerate(factors):
        cur = cur + multiply(x, cur)
        live = {m: c for m, c in cur.items() if need & ~m & ~reach[k + 1] == 0}
        cur = GrassmannElement(live, cur.n_vars)
    return integrate_variables(cur, variables)


class GrassmannOperator:
    """Bilinear operator ``sum_ij c_ij d/dpsi_i psi_j`` acting on Grassmann elements."""

    def __init__(self, terms: Iterable[tuple[int, int, float]], n_vars: int):
        self.n_vars = n_vars
        self.terms = [(int(i), int(j), float(c)) for i, j, c in terms if c != 0.0]

    @classmethod
    def from_matrix(cls, a) -> "GrassmannOperator":
        a = np.asarray(a.todense() if hasattr(a, "todense") else a, dtype=float)
        ii, jj = np.nonzero(a)
        return cls(zip(ii.tolist(), jj.tolist(), a[ii, jj].tolist()), a.shape[0])

    def __call__(self, g: GrassmannElement) -> GrassmannElement:
        return self.apply(g)

    def apply(self, g: GrassmannElement) -> GrassmannElement:
        if g.n_vars != self.n_vars:
            raise GrassmannError(f"operator on {self.n_vars} variables applied to {g.n_vars}")
        out = zero(self.n_vars)
        for i, j, c in self.terms:
            t = derive(multiply_variable(g, j), i)
            if not t.is_zero():
                out = out + c * t
        return out

    def matrix(self, masks: Iterable[int], strict: bool = False) -> np.ndarray:
        """Projection ``K[r, t] = int g~_r K g_t`` onto the listed basis states.

        With ``strict`` any image component outside the listed states is an error.
        """
        masks = list(masks)
        pos = {m: k for k, m in enumerate(masks)}
        mat = np.zeros((len(masks), len(masks)))
        for t, m in enumerate(masks):
            image = self.apply(basis_element(m, self.n_vars))
            for r_mask, c in image.items():
                r = pos.get(r_mask)
                if r is None:
                    if strict:
                        raise GrassmannError(f"image of state {m:#x} leaves the listed subspace")
                    continue
                sigma, s = conjugate_basis(r_mask, self.n_vars)
                proj = berezin_integrate(multiply(GrassmannElement({sigma: s}, self.n_vars),
                                                  GrassmannElement({r_mask: c}, self.n_vars)))
                mat[r, t] = proj
        return mat


def number_operator(n_vars: int) -> GrassmannOperator:
    """Total occupation ``N = sum_b d/dpsi_b psi_b``."""
    return GrassmannOperator(((b, b, 1.0) for b in range(n_vars)), n_vars)


def commutator(a, b, g: GrassmannElement) -> GrassmannElement:
    return a(b(g)) - b(a(g))
