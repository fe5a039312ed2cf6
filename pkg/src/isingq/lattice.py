"""Lattice geometry, real spinor algebra, the cube-corner stencil and evolution generators.

Sites form a periodic cubic lattice with spacing ``2*delta``.  Variables are
indexed flavor-major, then site (lexicographic in the three axes), then species,
which makes every one-particle operator a block matrix ``kron(site_op, spinor_op)``.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import grassmann as gr

MAX_ORACLE_VARS = gr.MAX_VARS


class ConfigError(ValueError):
    pass


class OracleTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class LatticeGeometry:
    """Periodic site lattice.

    ``shape`` holds the number of sites per axis (``L/2`` for the cubic lattice
    with ``L**3/8`` points).  Axes with one or two sites carry no derivative
    (the symmetric difference vanishes there), which is how reduced 1d/2d
    geometries are realised.
    """

    shape: tuple[int, int, int]
    delta: float = 1.0
    eps: float | None = None
    parity: str = "even"
    boundary: str = "periodic"

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        if len(shape) != 3 or min(shape) < 1:
            raise ConfigError(f"shape must be three positive site counts, got {self.shape}")
        object.__setattr__(self, "shape", shape)
        if not self.delta > 0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if self.eps is None:
            object.__setattr__(self, "eps", float(self.delta))
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.parity not in ("even", "odd"):
            raise ConfigError(f"parity must be 'even' or 'odd', got {self.parity!r}")
        if self.boundary != "periodic":
            raise ConfigError(f"only periodic boundaries are supported, got {self.boundary!r}")

    @classmethod
    def cubic(cls, L: int, delta: float = 1.0, eps: float | None = None, **kw) -> "LatticeGeometry":
        if L < 2 or L % 2:
            raise ConfigError(f"L must be a positive even integer, got {L}")
        return cls((L // 2,) * 3, delta, eps, **kw)

    @classmethod
    def line(cls, n: int, axis: int = 3, delta: float = 1.0, eps: float | None = None, **kw):
        """Reduced geometry with ``n`` sites along one axis (``axis`` in 1..3)."""
        if axis not in (1, 2, 3):
            raise ConfigError(f"axis must be 1, 2 or 3, got {axis}")
        shape = [1, 1, 1]
        shape[axis - 1] = n
        return cls(tuple(shape), delta, eps, **kw)

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> float:
        return 2.0 * self.delta

    @property
    def active_axes(self) -> tuple[int, ...]:
        """Axes (1-based) on which the symmetric difference is non-trivial."""
        return tuple(k + 1 for k, n in enumerate(self.shape) if n > 2)

    def site_index(self, m) -> int:
        m = [int(v) % n for v, n in zip(m, self.shape)]
        return (m[0] * self.shape[1] + m[1]) * self.shape[2] + m[2]

    def site_coords(self) -> np.ndarray:
        """Integer coordinates ``(S, 3)`` in lexicographic site order."""
        grids = np.meshgrid(*[np.arange(n) for n in self.shape], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def positions(self) -> np.ndarray:
        """Physical positions ``x_k = 2*delta*m_k`` (plus ``delta`` on the odd sublattice)."""
        offset = self.delta if self.parity == "odd" else 0.0
        return self.site_coords() * self.spacing + offset

    def n_vars(self, n_species: int) -> int:
        return n_species * self.n_sites

    def to_dict(self) -> dict:
        return {"shape": list(self.shape), "delta": self.delta, "eps": self.eps,
                "parity": self.parity, "boundary": self.boundary}


@dataclass(frozen=True)
class SpinorAlgebra:
    T: np.ndarray            # (3, 4, 4) real symmetric
    I_tilde: np.ndarray      # real antisymmetric, T1 T2 T3
    gamma: np.ndarray        # (4, 4, 4) real Dirac matrices, gamma[0] = gamma^0
    gamma_bar: np.ndarray    # -i gamma^0 gamma^1 gamma^2 gamma^3 (purely imaginary here)
    eta: np.ndarray
    mass_matrix: np.ndarray  # gamma^0 I_tilde: real antisymmetric, squares to -1
    sigma: np.ndarray        # (3, 2, 2) the 2x2 blocks of the diagonalised Hamiltonian
    U: np.ndarray            # unitary with U^dag (gamma^0 gamma_bar) U = diag(1, 1, -1, -1)


def _intertwiner(src, dst) -> np.ndarray:
    """Unitary ``X`` with ``X src_i = dst_i X`` (unique up to phase for an irreducible set)."""
    eye = np.eye(4)
    rows = [np.kron(eye, d) - np.kron(a.T, eye) for a, d in zip(src, dst)]
    _, sv, vh = np.linalg.svd(np.vstack(rows))
    if sv[-1] > 1e-10 or sv[-2] < 1e-6:
        raise RuntimeError("spinor representations are not equivalent")
    x = vh[-1].conj().reshape(4, 4, order="F")
    x = x / np.sqrt(np.trace(x.conj().T @ x).real / 4)
    k = np.flatnonzero(np.abs(x.ravel()) > 1e-9)[0]
    return x * (abs(x.ravel()[k]) / x.ravel()[k])


@lru_cache(maxsize=None)
def build_spinor_algebra() -> SpinorAlgebra:
    i2 = np.eye(2)
    z2 = np.zeros((2, 2))
    c = np.array([[0.0, 1.0], [-1.0, 0.0]])        # i tau_2
    tau1 = np.array([[0.0, 1.0], [1.0, 0.0]])
    tau2 = np.array([[0.0, -1j], [1j, 0.0]])
    tau3 = np.diag([1.0, -1.0])
    T = np.array([
        np.block([[z2, i2], [i2, z2]]),
        np.block([[z2, c], [-c, z2]]),
        np.block([[i2, z2], [z2, -i2]]),
    ])
    I_tilde = T[0] @ T[1] @ T[2]
    g0 = np.block([[z2, tau1], [-tau1, z2]])
    gamma = np.array([g0] + [-g0 @ T[k] for k in range(3)])
    gamma_bar = -1j * gamma[0] @ gamma[1] @ gamma[2] @ gamma[3]
    eta = np.diag([-1.0, 1.0, 1.0, 1.0])
    mass = g0 @ I_tilde
    sigma = np.array([-i2, 1j * tau2, 1j * tau3]).astype(complex)
    zc = np.zeros((2, 2), dtype=complex)
    target_T = [-np.block([[zc, s], [s.conj().T, zc]]) for s in sigma]
    target_b = np.diag([1.0, 1.0, -1.0, -1.0]).astype(complex)
    U = _intertwiner(target_T + [target_b], [*T.astype(complex), g0 @ gamma_bar])
    for arr in (T, I_tilde, gamma, gamma_bar, mass, sigma, U):
        arr.setflags(write=False)
    return SpinorAlgebra(T, I_tilde, gamma, gamma_bar, eta, mass, sigma, U)


def stencil(v) -> np.ndarray:
    """Corner weight ``Y({v})`` of the cube stencil for corner signs ``v``."""
    v1, v2, v3 = (int(s) for s in v)
    if {v1, v2, v3} - {-1, 1}:
        raise ValueError(f"corner signs must be +-1, got {v}")
    alg = build_spinor_algebra()
    w = (-v2 * v3, v1 * v3, -v1 * v2)
    vs = (v1, v2, v3)
    y = np.eye(4)
    for k in range(3):
        y = y - (vs[k] * np.eye(4) + w[k] * alg.I_tilde) @ alg.T[k]
    y = y - v1 * v2 * v3 * alg.I_tilde
    return y / 8.0


CORNERS = tuple(itertools.product((1, -1), repeat=3))


def _as_site_field(value, geometry: LatticeGeometry, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(geometry.n_sites, float(arr))
    arr = arr.reshape(-1)
    if arr.size != geometry.n_sites:
        raise ConfigError(f"{name} must be a scalar or have {geometry.n_sites} site values, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class ModelParams:
    """Species count, mass, charge and the external potential sampled on sites."""

    Ns: int = 4
    m: float = 0.0
    e: float = 0.0
    A0: object = 0.0
    Ak: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.Ns not in (4, 8):
            raise ConfigError(f"Ns must be 4 or 8, got {self.Ns}")
        if self.Ns == 4 and (self.m != 0 or self.e != 0):
            raise ConfigError("Ns = 4 (Majorana) requires m = 0 and e = 0")
        if len(self.Ak) != 3:
            raise ConfigError("Ak needs three components")

    def potentials(self, geometry: LatticeGeometry) -> tuple[np.ndarray, np.ndarray]:
        a0 = _as_site_field(self.A0, geometry, "A0")
        ak = np.array([_as_site_field(a, geometry, f"A{k + 1}") for k, a in enumerate(self.Ak)])
        return a0, ak


def difference_matrix(geometry: LatticeGeometry, axis: int) -> sp.csr_matrix:
    """Periodic symmetric difference ``(f(x + a e_k) - f(x - a e_k)) / (2a)`` with ``a = 2*delta``."""
    coords = geometry.site_coords()
    n = geometry.n_sites
    rows = np.arange(n)
    plus = coords.copy()
    plus[:, axis - 1] += 1
    minus = coords.copy()
    minus[:, axis - 1] -= 1
    ip = np.array([geometry.site_index(m) for m in plus])
    im = np.array([geometry.site_index(m) for m in minus])
    h = 1.0 / (2.0 * geometry.spacing)
    d = sp.coo_matrix((np.r_[np.full(n, h), np.full(n, -h)], (np.r_[rows, rows], np.r_[ip, im])),
                      shape=(n, n)).tocsr()
    d.sum_duplicates()
    d.eliminate_zeros()
    return d


def flavor_operator(params: ModelParams, geometry: LatticeGeometry) -> sp.csr_matrix:
    """``T_k d_k - m gamma^0 I~`` on one Majorana flavor (real antisymmetric)."""
    alg = build_spinor_algebra()
    n = geometry.n_sites
    op = sp.csr_matrix((4 * n, 4 * n))
    for k in range(3):
        if geometry.shape[k] > 2:
            op = op + sp.kron(difference_matrix(geometry, k + 1), alg.T[k], format="csr")
    if params.m:
        op = op - params.m * sp.kron(sp.identity(n), alg.mass_matrix, format="csr")
    op = op.tocsr()
    op.eliminate_zeros()
    return op


def gauge_matrix(params: ModelParams, geometry: LatticeGeometry) -> sp.csr_matrix:
    """``A0 - A_k T_k`` as a real symmetric site-diagonal block matrix."""
    alg = build_spinor_algebra()
    a0, ak = params.potentials(geometry)
    c = sp.kron(sp.diags(a0), np.eye(4), format="csr")
    for k in range(3):
        if np.any(ak[k]):
            c = c - sp.kron(sp.diags(ak[k]), alg.T[k], format="csr")
    return c.tocsr()


def one_particle_operator(params: ModelParams, geometry: LatticeGeometry) -> sp.csr_matrix:
    """Real antisymmetric ``B x B`` matrix ``A`` with ``K = sum_ij A_ij d/dpsi_i psi_j``.

    For ``Ns = 8`` the two flavors are coupled by the charge term,
    ``A = [[F, eC], [-eC, F]]``.
    """
    f = flavor_operator(params, geometry)
    if params.Ns == 4:
        return f
    blocks = [[f, None], [None, f]]
    if params.e:
        c = params.e * gauge_matrix(params, geometry)
        blocks = [[f, c], [-c, f]]
    out = sp.bmat(blocks, format="csr")
    out.eliminate_zeros()
    return out


def build_generator_grassmann(params: ModelParams, geometry: LatticeGeometry) -> gr.GrassmannOperator:
    """The generator as an operator on Grassmann elements (oracle scale only)."""
    b = geometry.n_vars(params.Ns)
    if b > MAX_ORACLE_VARS:
        raise OracleTooLarge(
            f"{b} Grassmann variables exceed the oracle limit of {MAX_ORACLE_VARS}; "
            "use build_generator_sector for this geometry"
        )
    return gr.GrassmannOperator.from_matrix(one_particle_operator(params, geometry))


@dataclass(frozen=True)
class EvolutionGenerator:
    """Sector-restricted real antisymmetric generator."""

    matrix: sp.csr_matrix
    basis: object
    params: ModelParams
    geometry: LatticeGeometry

    @property
    def m(self) -> int:
        return self.basis.m

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def antisymmetry_defect(self) -> float:
        d = (self.matrix + self.matrix.T).tocoo()
        return float(np.max(np.abs(d.data), initial=0.0))


def build_generator_sector(params: ModelParams, geometry: LatticeGeometry, m: int,
                           max_dim: int = 2_000_000) -> EvolutionGenerator:
    from .sectors import SectorBasis, second_quantize

    n_vars = geometry.n_vars(params.Ns)
    basis = SectorBasis(n_vars, m, max_dim=max_dim)
    k = second_quantize(one_particle_operator(params, geometry), basis)
    return EvolutionGenerator(k, basis, params, geometry)


# --- finite-step transfer between the staggered sublattices -------------------------


def _stagger_target(coords: np.ndarray, v, source_parity: str) -> np.ndarray:
    """Integer coordinates of the corner ``x + v*delta`` on the opposite sublattice."""
    v = np.asarray(v)
    if source_parity == "even":
        return coords + (v - 1) // 2
    return coords + (v + 1) // 2


def stencil_coupling(geometry: LatticeGeometry) -> sp.csr_matrix:
    """``W`` with ``L(t) = sum psi_i(t) W_ij psi_j(t + eps)``; rows on ``geometry.parity``."""
    coords = geometry.site_coords()
    n = geometry.n_sites
    mat = sp.csr_matrix((4 * n, 4 * n))
    for v in CORNERS:
        tgt = _stagger_target(coords, v, geometry.parity)
        cols = np.array([geometry.site_index(m) for m in tgt])
        shift = sp.csr_matrix((np.ones(n), (np.arange(n), cols)), shape=(n, n))
        mat = mat + sp.kron(shift, stencil(v), format="csr")
    mat = mat.tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return mat


def _other(geometry: LatticeGeometry) -> LatticeGeometry:
    return LatticeGeometry(geometry.shape, geometry.delta, geometry.eps,
                           "odd" if geometry.parity == "even" else "even")


def build_one_particle_transfer(geometry: LatticeGeometry) -> sp.csr_matrix:
    """One-step amplitude map from ``geometry.parity`` sites to the other sublattice.

    A one-particle state ``sum_l q_l a^dag_l |0>`` at time ``t`` is mapped to the
    one-hole state ``sum_j q'_j psi_j(t + eps)`` over the fully occupied state,
    with ``q' = W^T q``.
    """
    return stencil_coupling(geometry).T.tocsr()


def two_step_transfer(geometry: LatticeGeometry) -> sp.csr_matrix:
    """``R(t + 2 eps, t)`` on one-particle amplitudes of a single sublattice.

    The second step takes the hole state on the other sublattice back to a
    particle state; its amplitude map is ``W'^T`` with ``W'`` the coupling
    rooted on the other sublattice (``det W' = 1``, so the cofactor matrix
    that the Berezin integral produces coincides with ``W'``).  The product
    is orthogonal for every ``eps``.
    """
    w1 = stencil_coupling(geometry)
    w2 = stencil_coupling(_other(geometry))
    return (w2.T @ w1.T).tocsr()


def _action_factors(w: np.ndarray) -> list[gr.GrassmannElement]:
    n_a = w.shape[0]
    n = 2 * n_a
    out = []
    for i in range(n_a):
        partner = gr.GrassmannElement({1 << (n_a + j): float(w[i, j]) for j in np.flatnonzero(w[i])}, n)
        out.append(-1.0 * gr.multiply(gr.variable(i, n), partner))
    return out


def grassmann_transfer_oracle(geometry: LatticeGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Both one-step amplitude maps obtained by explicit Berezin integration.

    Source variables occupy indices ``0..n-1`` and target variables ``n..2n-1``
    of a ``2n``-variable algebra.  Step one integrates ``exp(-L) g`` for the
    one-particle states ``a^dag_l |0>``, step two for the one-hole states
    ``psi_l``; the returned matrices should equal ``W^T`` and ``W'^T``.
    """
    w1 = stencil_coupling(geometry).toarray()
    w2 = stencil_coupling(_other(geometry)).toarray()
    n_a = w1.shape[0]
    n = 2 * n_a
    if n > MAX_ORACLE_VARS:
        raise OracleTooLarge(f"transfer oracle needs {n} variables (cap {MAX_ORACLE_VARS})")
    f1, f2 = _action_factors(w1), _action_factors(w2)
    src = range(n_a)
    full_target = ((1 << n_a) - 1) << n_a
    o1 = np.zeros((n_a, n_a))
    o2 = np.zeros((n_a, n_a))
    vacuum = gr.basis_element((1 << n_a) - 1, n)
    for l in range(n_a):
        out = gr.integrate_product(f1, gr.derive(vacuum, l), src)
        for mask, c in out.items():
            o1[mask.bit_length() - 1 - n_a, l] = c
        out = gr.integrate_product(f2, gr.variable(l, n), src)
        for mask, c in out.items():
            # psi_j written as the hole in the full product; (-1)^j reorders it
            j = (full_target ^ mask).bit_length() - 1 - n_a
            o2[j, l] = c * (-1) ** j
    return o1, o2


# --- config and export ---------------------------------------------------------------


def _parse_field(spec, geometry: LatticeGeometry, name: str):
    """A field given as number, site list, or an expression in x1, x2, x3."""
    if isinstance(spec, str):
        pos = geometry.positions()
        env = {"x1": pos[:, 0], "x2": pos[:, 1], "x3": pos[:, 2], "np": np, "pi": math.pi}
        try:
            val = eval(spec, {"__builtins__": {}}, env)  # noqa: S307 - trusted local config
        except Exception as exc:  # pragma: no cover - message path
            raise ConfigError(f"cannot evaluate {name} expression {spec!r}: {exc}") from exc
        return np.broadcast_to(np.asarray(val, dtype=float), (geometry.n_sites,)).copy()
    return spec


def load_model_config(source) -> tuple[ModelParams, LatticeGeometry]:
    """Read ``{L | shape, delta, eps, Ns, m, e, A: {A0, Ak}, boundary}`` from JSON/TOML or a dict."""
    if isinstance(source, (str, Path)):
        cfg = read_config_file(source)
    else:
        cfg = dict(source)
    if "shape" in cfg:
        shape = cfg["shape"]
    elif "L" in cfg:
        L = int(cfg["L"])
        if L < 2 or L % 2:
            raise ConfigError(f"L must be a positive even integer, got {L}")
        shape = (L // 2,) * 3
    else:
        raise ConfigError("config needs 'L' or 'shape'")
    geometry = LatticeGeometry(tuple(shape), float(cfg.get("delta", 1.0)),
                               cfg.get("eps"), cfg.get("parity", "even"),
                               cfg.get("boundary", "periodic"))
    pot = cfg.get("A", {}) or {}
    a0 = _parse_field(pot.get("A0", 0.0), geometry, "A0")
    ak = pot.get("Ak", [0.0, 0.0, 0.0])
    ak = tuple(_parse_field(a, geometry, f"A{k + 1}") for k, a in enumerate(ak))
    params = ModelParams(int(cfg.get("Ns", 4)), float(cfg.get("m", 0.0)), float(cfg.get("e", 0.0)), a0, ak)
    params.potentials(geometry)
    return params, geometry


def read_config_file(path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            return tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc


def write_coo(matrix, path) -> None:
    """Coordinate-format text export, one ``row col value`` line per stored entry."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {v:.17g}\n")


def read_coo(path, shape) -> sp.csr_matrix:
    data = np.loadtxt(path, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix(shape)
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=shape)
