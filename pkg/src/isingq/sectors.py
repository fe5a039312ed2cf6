"""Particle-number sectors, creation/annihilation, vacua and classical observables.

A sector with ``m`` occupied bits is enumerated by the sorted tuples of occupied
variable indices, ranked in colexicographic order
(``rank = sum_r C(o_r, r + 1)``).  Sector vectors use the Grassmann basis
elements ``g_tau`` (canonical ascending products of the *empty* variables) as
their orthonormal basis, so every sign below is the Grassmann reordering sign.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp


class SectorTooLarge(MemoryError):
    pass


class PauliExcluded(ValueError):
    pass


def _binomial_table(n: int, k: int) -> np.ndarray:
    table = np.zeros((n + 1, k + 2), dtype=np.int64)
    for a in range(n + 1):
        for b in range(min(a, k + 1) + 1):
            table[a, b] = math.comb(a, b)
    return table


class SectorBasis:
    """Bijection between occupied-index sets of size ``m`` and dense indices."""

    def __init__(self, n_vars: int, m: int, max_dim: int = 2_000_000):
        if not 0 <= m <= n_vars:
            raise ValueError(f"particle number {m} outside [0, {n_vars}]")
        dim = math.comb(n_vars, m)
        if dim > max_dim:
            raise SectorTooLarge(f"sector dimension C({n_vars}, {m}) = {dim} exceeds budget {max_dim}")
        self.n_vars = n_vars
        self.m = m
        self.dim = dim
        self._binom = _binomial_table(n_vars, m)
        if m == 0:
            occ = np.zeros((1, 0), dtype=np.int64)
        else:
            occ = np.array(list(itertools.combinations(range(n_vars), m)), dtype=np.int64)
            occ = occ[np.argsort(self.rank(occ), kind="stable")]
        occ.setflags(write=False)
        self.occupied = occ
        self._occupancy = None

    def __repr__(self) -> str:
        return f"SectorBasis(n_vars={self.n_vars}, m={self.m}, dim={self.dim})"

    def __eq__(self, other) -> bool:
        return isinstance(other, SectorBasis) and (self.n_vars, self.m) == (other.n_vars, other.m)

    def __hash__(self):
        return hash((self.n_vars, self.m))

    def rank(self, occ) -> np.ndarray:
        """Dense index of sorted occupied-index rows."""
        occ = np.asarray(occ, dtype=np.int64)
        if self.m == 0:
            return np.zeros(occ.shape[0] if occ.ndim == 2 else 1, dtype=np.int64)
        occ = occ.reshape(-1, self.m)
        return self._binom[occ, np.arange(1, self.m + 1)].sum(axis=1)

    def index_of(self, occupied) -> int:
        occ = sorted(int(o) for o in occupied)
        if len(occ) != self.m or len(set(occ)) != self.m or (occ and not 0 <= occ[0] <= occ[-1] < self.n_vars):
            raise ValueError(f"{occupied} is not a valid occupied set for {self}")
        return int(self.rank(np.array([occ]))[0])

    def occupancy(self) -> np.ndarray:
        """Boolean ``(dim, n_vars)`` occupation table (cached, read-only)."""
        if self._occupancy is None:
            occ = np.zeros((self.dim, self.n_vars), dtype=bool)
            if self.m:
                occ[np.arange(self.dim)[:, None], self.occupied] = True
            occ.setflags(write=False)
            self._occupancy = occ
        return self._occupancy

    def grassmann_mask(self, idx: int) -> int:
        """Basis bitmask (set bits = empty variables); only for ``n_vars <= 62``."""
        full = (1 << self.n_vars) - 1
        m = 0
        for o in self.occupied[idx]:
            m |= 1 << int(o)
        return full ^ m

    def masks(self) -> list[int]:
        return [self.grassmann_mask(k) for k in range(self.dim)]


@lru_cache(maxsize=64)
def sector_basis(n_vars: int, m: int) -> SectorBasis:
    """Shared, unbudgeted basis for intermediate sectors of creation/annihilation chains."""
    return SectorBasis(n_vars, m, max_dim=math.comb(n_vars, m))


def _empty_below(occupancy: np.ndarray) -> np.ndarray:
    """``E[s, b]`` = number of empty variables with index < b in state s."""
    empty = ~occupancy
    out = np.zeros(occupancy.shape, dtype=np.int64)
    out[:, 1:] = np.cumsum(empty[:, :-1], axis=1)
    return out


def hopping(basis: SectorBasis, pairs) -> sp.csr_matrix:
    """``sum c * a^dag_i a_j`` (Grassmann: ``c d/dpsi_i psi_j``) on one sector.

    ``pairs`` is an iterable of ``(i, j, c)``.
    """
    occ = basis.occupancy()
    below = _empty_below(occ)
    rows, cols, vals = [], [], []
    for i, j, c in pairs:
        i, j = int(i), int(j)
        if i == j:
            s = np.flatnonzero(occ[:, j])
            rows.append(s)
            cols.append(s)
            vals.append(np.full(s.size, float(c)))
            continue
        s = np.flatnonzero(occ[:, j] & ~occ[:, i])
        if s.size == 0:
            continue
        # psi_j passes the empty variables below j; d/dpsi_i passes those below i,
        # counting j itself once it has become empty.
        parity = below[s, j] + below[s, i] + (1 if j < i else 0)
        sign = np.where(parity & 1, -1.0, 1.0)
        new = basis.occupied[s].copy()
        new[new == j] = i
        new.sort(axis=1)
        rows.append(basis.rank(new))
        cols.append(s)
        vals.append(sign * float(c))
    if not rows:
        return sp.csr_matrix((basis.dim, basis.dim))
    out = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(basis.dim, basis.dim))
    out.sum_duplicates()
    return out


def second_quantize(a, basis: SectorBasis) -> sp.csr_matrix:
    """Sector image of ``sum_ij A_ij d/dpsi_i psi_j``."""
    coo = sp.coo_matrix(a)
    if coo.shape != (basis.n_vars, basis.n_vars):
        raise ValueError(f"operator shape {coo.shape} does not match {basis.n_vars} variables")
    out = hopping(basis, zip(coo.row, coo.col, coo.data))
    out.eliminate_zeros()
    return out


def creation_matrix(basis: SectorBasis, i: int) -> tuple[sp.csr_matrix, SectorBasis]:
    """``a^dag_i = d/dpsi_i`` as a map from sector ``m`` to ``m + 1``."""
    if not 0 <= i < basis.n_vars:
        raise IndexError(f"variable {i} out of range")
    target = sector_basis(basis.n_vars, basis.m + 1)
    occ = basis.occupancy()
    s = np.flatnonzero(~occ[:, i])
    below = _empty_below(occ)
    sign = np.where(below[s, i] & 1, -1.0, 1.0)
    new = np.concatenate([basis.occupied[s], np.full((s.size, 1), i)], axis=1)
    new.sort(axis=1)
    mat = sp.csr_matrix((sign, (target.rank(new), s)), shape=(target.dim, basis.dim))
    return mat, target


def annihilation_matrix(basis: SectorBasis, i: int) -> tuple[sp.csr_matrix, SectorBasis]:
    """``a_i = psi_i *`` as a map from sector ``m`` to ``m - 1``."""
    if not 0 <= i < basis.n_vars:
        raise IndexError(f"variable {i} out of range")
    if basis.m == 0:
        raise ValueError("cannot annihilate in the zero-particle sector")
    target = sector_basis(basis.n_vars, basis.m - 1)
    occ = basis.occupancy()
    s = np.flatnonzero(occ[:, i])
    below = _empty_below(occ)
    sign = np.where(below[s, i] & 1, -1.0, 1.0)
    rows = basis.occupied[s]
    new = rows[rows != i].reshape(s.size, basis.m - 1)
    mat = sp.csr_matrix((sign, (target.rank(new), s)), shape=(target.dim, basis.dim))
    return mat, target


def apply_creation(state, basis: SectorBasis, i: int) -> tuple[np.ndarray, SectorBasis]:
    mat, target = creation_matrix(basis, i)
    return mat @ np.asarray(state), target


def apply_annihilation(state, basis: SectorBasis, i: int) -> tuple[np.ndarray, SectorBasis]:
    mat, target = annihilation_matrix(basis, i)
    return mat @ np.asarray(state), target


# --- vacua and particle states -------------------------------------------------------


@dataclass(frozen=True)
class VacuumState:
    """Static reference state with definite particle number ``m0``."""

    kind: str                 # "empty" | "full" | "custom"
    basis: SectorBasis
    vector: np.ndarray

    @property
    def m0(self) -> int:
        return self.basis.m

    @property
    def n_vars(self) -> int:
        return self.basis.n_vars


def empty_vacuum(n_vars: int) -> VacuumState:
    """``g0 = |0>``, the product of all variables (no bit occupied)."""
    return VacuumState("empty", sector_basis(n_vars, 0), np.ones(1))


def full_vacuum(n_vars: int) -> VacuumState:
    """``g0 = 1``, every bit occupied."""
    return VacuumState("full", sector_basis(n_vars, n_vars), np.ones(1))


def filled_vacuum(a, n_filled: int | None = None) -> VacuumState:
    """Slater state filling ``n_filled`` orthonormal modes spanning an invariant subspace of ``A``.

    For real antisymmetric ``A`` each real Schur block spans an invariant plane
    on which ``A`` is traceless, so the filled state is annihilated by the
    generator.  Defaults to half filling.
    """
    a = np.asarray(a.todense() if hasattr(a, "todense") else a, dtype=float)
    n = a.shape[0]
    n_filled = n // 2 if n_filled is None else n_filled
    t, z = sla.schur(a, output="real")
    # block boundaries of the quasi-triangular Schur form
    starts, k = [], 0
    while k < n:
        starts.append(k)
        k += 2 if k + 1 < n and abs(t[k + 1, k]) > 1e-12 else 1
    if n_filled not in starts + [n]:
        raise ValueError(f"cannot fill {n_filled} modes without splitting a 2x2 invariant block")
    modes = z[:, :n_filled]
    basis = sector_basis(n, 0)
    vec = np.ones(1)
    for col in modes.T:
        vec, basis = _create_mode(vec, basis, col)
    return VacuumState("custom", basis, vec)


def _create_mode(vec, basis: SectorBasis, u) -> tuple[np.ndarray, SectorBasis]:
    """``a^dag(u) = sum_l u_l a^dag_l`` applied to a sector vector."""
    out = None
    target = None
    for l in np.flatnonzero(np.abs(u) > 0):
        mat, target = creation_matrix(basis, int(l))
        term = u[l] * (mat @ vec)
        out = term if out is None else out + term
    if out is None:
        target = sector_basis(basis.n_vars, basis.m + 1)
        out = np.zeros(target.dim)
    return out, target


def _annihilate_mode(vec, basis: SectorBasis, u) -> tuple[np.ndarray, SectorBasis]:
    out = None
    target = None
    for l in np.flatnonzero(np.abs(u) > 0):
        mat, target = annihilation_matrix(basis, int(l))
        term = u[l] * (mat @ vec)
        out = term if out is None else out + term
    return out, target


def _check_normalised(q, atol=1e-9) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(-1)
    n2 = float(q @ q)
    if abs(n2 - 1.0) > atol:
        raise ValueError(f"one-particle amplitudes not normalised: sum q^2 = {n2:.12g}")
    return q


def one_particle_state(q, vacuum: VacuumState) -> tuple[np.ndarray, SectorBasis]:
    """Embed one-particle amplitudes above a static vacuum.

    Over the empty or a custom vacuum the state is ``sum_l q_l a^dag_l g0``.  The
    fully occupied vacuum is annihilated by every ``a^dag``, so there the
    excitation is the hole state ``sum_l q_l a_l g0``, which obeys the same
    one-particle evolution.
    """
    q = _check_normalised(q)
    if q.size != vacuum.n_vars:
        raise ValueError(f"expected {vacuum.n_vars} amplitudes, got {q.size}")
    if vacuum.kind == "full":
        return _annihilate_mode(vacuum.vector, vacuum.basis, q)
    state, basis = _create_mode(vacuum.vector, vacuum.basis, q)
    if abs(float(state @ state) - 1.0) > 1e-9:
        raise PauliExcluded("Pauli-excluded input: amplitudes overlap modes filled in the vacuum")
    return state, basis


def _excitation_frame(vacuum: VacuumState) -> tuple[sp.csr_matrix, SectorBasis]:
    """Columns are the excited states ``a^dag_l g0`` (``a_l g0`` for the full vacuum)."""
    cols = []
    target = None
    for l in range(vacuum.n_vars):
        if vacuum.kind == "full":
            mat, target = annihilation_matrix(vacuum.basis, l)
        else:
            mat, target = creation_matrix(vacuum.basis, l)
        cols.append(sp.csr_matrix(mat @ vacuum.vector).T)
    return sp.hstack(cols).tocsr(), target


def extract_one_particle(state, vacuum: VacuumState) -> np.ndarray:
    """Minimal-norm amplitudes ``q`` with ``sum_l q_l a^dag_l g0 = state``."""
    frame, _ = _excitation_frame(vacuum)
    c = frame.T @ np.asarray(state)
    if vacuum.kind in ("empty", "full"):
        return np.asarray(c)
    gram = (frame.T @ frame).toarray()
    return np.linalg.pinv(gram, rcond=1e-10) @ c


def two_particle_state(q, vacuum: VacuumState | None = None, n_vars: int | None = None):
    """``(1/sqrt 2) sum_ij Q_ij a^dag_i a^dag_j g0`` with ``Q`` antisymmetrised and normalised."""
    q = np.asarray(q, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise ValueError("two-particle amplitudes must be a square matrix")
    if vacuum is None:
        vacuum = empty_vacuum(n_vars or q.shape[0])
    qa = 0.5 * (q - q.T)
    norm = np.linalg.norm(qa)
    if norm < 1e-14 * max(1.0, np.linalg.norm(q)):
        raise PauliExcluded("Pauli-excluded input: amplitudes vanish after antisymmetrisation")
    qa = qa / norm
    out = None
    target = None
    for j in range(q.shape[0]):
        col = qa[:, j]
        if not np.any(col):
            continue
        mat_j, mid = creation_matrix(vacuum.basis, j)
        inner = mat_j @ vacuum.vector
        outer, target = _create_mode(inner, mid, col)
        out = outer if out is None else out + outer
    return out / math.sqrt(2.0), target


def two_particle_amplitudes(state, vacuum: VacuumState) -> np.ndarray:
    """``Q_ij = <a^dag_i a^dag_j g0 | state> / sqrt 2`` for every ordered pair."""
    n = vacuum.n_vars
    single = []
    mid = None
    for j in range(n):
        mat, mid = creation_matrix(vacuum.basis, j)
        single.append(mat @ vacuum.vector)
    cre = [creation_matrix(mid, i)[0] for i in range(n)]
    state = np.asarray(state)
    out = np.empty((n, n))
    for i in range(n):
        proj = cre[i].T @ state
        for j in range(n):
            out[i, j] = single[j] @ proj
    return out / math.sqrt(2.0)


# --- observables ---------------------------------------------------------------------


@dataclass(frozen=True)
class DiagonalObservable:
    """Classical observable with value ``values[tau]`` in every basis state."""

    name: str
    values: np.ndarray
    basis: SectorBasis

    @property
    def spectrum(self) -> np.ndarray:
        return np.unique(self.values)

    def operator(self) -> sp.dia_matrix:
        return sp.diags(self.values)


def occupation_observable(basis: SectorBasis, variables, name: str = "occupation") -> DiagonalObservable:
    occ = basis.occupancy()
    vals = occ[:, list(variables)].sum(axis=1).astype(float)
    return DiagonalObservable(name, vals, basis)


def site_variables(site: int, n_sites: int, n_species: int) -> list[int]:
    """Linear indices of all species (and flavors) living on ``site``."""
    flavors = n_species // 4
    return [(f * n_sites + site) * 4 + g for f in range(flavors) for g in range(4)]


def local_number(basis: SectorBasis, site: int, n_sites: int) -> DiagonalObservable:
    n_species = basis.n_vars // n_sites
    return occupation_observable(basis, site_variables(site, n_sites, n_species), f"N({site})")


def total_number(basis: SectorBasis) -> DiagonalObservable:
    return DiagonalObservable("N", np.full(basis.dim, float(basis.m)), basis)


def interval_observable(basis: SectorBasis, sites, n_sites: int) -> DiagonalObservable:
    """``J_R = sum_{x in R} N(x)``; integer-valued in every basis state."""
    n_species = basis.n_vars // n_sites
    variables = [v for s in sorted(set(int(x) for x in sites)) for v in site_variables(s, n_sites, n_species)]
    return occupation_observable(basis, variables, f"J[{len(variables) // n_species} sites]")


def position_observable(basis: SectorBasis, positions, axis: int = 0) -> DiagonalObservable:
    """``X_k = sum_x x_k N(x)``; ``positions`` is ``(S, d)``."""
    positions = np.asarray(positions, dtype=float)
    n_sites = positions.shape[0]
    n_species = basis.n_vars // n_sites
    per_var = np.repeat(np.tile(positions[:, axis], n_species // 4), 4)
    vals = basis.occupancy().astype(float) @ per_var
    return DiagonalObservable(f"X{axis + 1}", vals, basis)


def expect(obs: DiagonalObservable, q) -> tuple[float, float]:
    """``(sum_tau p_tau A_tau, q^T A q)`` - the classical and the quantum rule."""
    q = np.asarray(q, dtype=float)
    p = q * q
    classical = float(np.sum(p * obs.values))
    quantum = float(q @ (obs.operator() @ q))
    return classical, quantum


def position_moments(q, basis: SectorBasis, positions) -> dict:
    """Mean position and total dispersion ``<X_k X_k> - <X_k><X_k>`` by the classical rule."""
    positions = np.asarray(positions, dtype=float)
    q = np.asarray(q, dtype=float)
    mean = []
    second = 0.0
    for k in range(positions.shape[1]):
        x = position_observable(basis, positions, k)
        mean.append(expect(x, q)[0])
        second += float(np.sum(q * q * x.values ** 2))
    mean = np.array(mean)
    return {"mean": mean, "dispersion": second - float(mean @ mean)}


def quantum_position_moments(phi, positions) -> dict:
    """The same moments from one-particle amplitudes, ``int phi^dag x phi``."""
    positions = np.asarray(positions, dtype=float)
    phi = np.asarray(phi)
    n_sites = positions.shape[0]
    w = (np.abs(phi.reshape(-1, n_sites, 4)) ** 2).sum(axis=(0, 2))
    mean = positions.T @ w
    second = float(np.sum(w * np.sum(positions ** 2, axis=1)))
    return {"mean": mean, "dispersion": second - float(mean @ mean), "density": w}


def commutator_expectation(obs: DiagonalObservable, q, k) -> float:
    """``<q [A, K] q>``, the rate of change of ``<A>``."""
    q = np.asarray(q, dtype=float)
    # q^T (A K - K A) q with K antisymmetric
    return 2.0 * float((obs.values * q) @ (k @ q))


def expectation_flow(obs: DiagonalObservable, q, k) -> float:
    return commutator_expectation(obs, q, k)


def local_number_flow(q, basis: SectorBasis, a, site: int, n_sites: int) -> float:
    """Right-hand side of the local continuity law from off-diagonal expectations.

    ``d<N(x)>/dt = 2 sum_{i at x, j not at x} A_ij <M_ij>`` with
    ``M_ij = d/dpsi_i psi_j``; this is the lattice form of the current divergence
    ``(T_k)_{eta alpha} d_k <M_{alpha eta}>``.
    """
    q = np.asarray(q, dtype=float)
    n_species = basis.n_vars // n_sites
    here = set(site_variables(site, n_sites, n_species))
    coo = sp.coo_matrix(a)
    total = 0.0
    for i, j, c in zip(coo.row, coo.col, coo.data):
        if i in here and j not in here:
            m_ij = hopping(basis, [(i, j, 1.0)])
            total += 2.0 * c * float(q @ (m_ij @ q))
    return total
