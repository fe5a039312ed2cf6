"""One-particle Dirac and Schroedinger solvers and the interference demos.

The complex Dirac field ``phi = q1 + i q2`` combines the two Majorana flavors of
the ``Ns = 8`` model.  On the lattice it obeys ``i d phi/dt = H phi`` with

    H = i (T_k D_k - m gamma^0 I~) + e (A0 - T_k A_k),

which is exactly the complex form of the real generator built in
:mod:`isingq.lattice`.  ``gamma^0 gamma_bar = -i gamma^0 I~`` so the mass term is
the familiar ``m gamma^0 gamma_bar``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.signal import find_peaks

from . import ensemble
from .lattice import (ConfigError, LatticeGeometry, ModelParams, build_generator_sector, build_spinor_algebra,
                      difference_matrix, flavor_operator, gauge_matrix)
from .sectors import empty_vacuum, extract_one_particle, one_particle_state

EXACT_DIM_LIMIT = 4096
HERMITICITY_TOL = 1e-12


class StepSizeError(ValueError):
    def __init__(self, message: str, suggested_dt: float):
        super().__init__(f"{message}; suggested dt <= {suggested_dt:.6g}")
        self.suggested_dt = suggested_dt


class GridMismatch(ValueError):
    pass


# --- Dirac field and Hamiltonian -----------------------------------------------------


@dataclass(frozen=True)
class HamiltonianSpec:
    """Mass, charge and external potentials (``V = e A0``); ``hbar = 1``."""

    m: float = 0.0
    e: float = 0.0
    A0: object = 0.0
    Ak: tuple = (0.0, 0.0, 0.0)
    basis: str = "original"

    def __post_init__(self):
        if self.basis not in ("original", "diagonal"):
            raise ConfigError(f"basis must be 'original' or 'diagonal', got {self.basis!r}")
        if not (math.isfinite(self.m) and math.isfinite(self.e)):
            raise ConfigError("m and e must be finite")

    def model_params(self) -> ModelParams:
        return ModelParams(Ns=8, m=self.m, e=self.e, A0=self.A0, Ak=tuple(self.Ak))


def _spinor_change(n_sites: int) -> sp.csr_matrix:
    return sp.kron(sp.identity(n_sites), build_spinor_algebra().U, format="csr")


def build_hamiltonian(spec: HamiltonianSpec, grid: LatticeGeometry) -> sp.csr_matrix:
    """Sparse hermitean ``H`` on ``4 S`` components (site-major, spinor-minor)."""
    params = spec.model_params()
    h = 1j * flavor_operator(params, grid).astype(complex)
    if spec.e:
        h = h + spec.e * gauge_matrix(params, grid)
    if spec.basis == "diagonal":
        u = _spinor_change(grid.n_sites)
        h = u.conj().T @ h @ u
    h = sp.csr_matrix(h)
    h.eliminate_zeros()
    return h


def hermiticity_defect(h) -> float:
    d = (h - h.conj().T).tocoo() if sp.issparse(h) else h - h.conj().T
    data = d.data if sp.issparse(d) else d
    return float(np.max(np.abs(data), initial=0.0))


@dataclass(frozen=True)
class DiracField:
    """Complex four-spinor per site, ``phi`` of shape ``(S, 4)``."""

    phi: np.ndarray
    grid: LatticeGeometry
    basis: str = "original"

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=complex)
        if phi.shape != (self.grid.n_sites, 4):
            phi = phi.reshape(self.grid.n_sites, 4)
        if not np.all(np.isfinite(phi)):
            raise ValueError("Dirac field has non-finite entries")
        norm = float(np.sum(np.abs(phi) ** 2))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"Dirac field not normalised: norm = {norm:.12g}")
        object.__setattr__(self, "phi", phi)

    @classmethod
    def from_real(cls, q1, q2, grid: LatticeGeometry) -> "DiracField":
        return cls(np.asarray(q1) + 1j * np.asarray(q2), grid)

    def density(self) -> np.ndarray:
        return np.sum(np.abs(self.phi) ** 2, axis=1)

    def real_parts(self) -> tuple[np.ndarray, np.ndarray]:
        if self.basis != "original":
            return self.to_basis("original").real_parts()
        return self.phi.real.ravel(), self.phi.imag.ravel()

    def to_basis(self, basis: str) -> "DiracField":
        if basis == self.basis:
            return self
        u = build_spinor_algebra().U
        if basis == "diagonal":
            return DiracField(self.phi @ u.conj(), self.grid, "diagonal")   # rows: U^dag phi
        if basis == "original":
            return DiracField(self.phi @ u.T, self.grid, "original")
        raise ConfigError(f"unknown basis {basis!r}")

    def norm(self) -> float:
        return float(np.sum(np.abs(self.phi) ** 2))


def gaussian_dirac_packet(grid: LatticeGeometry, center, width: float, k0, spinor, basis: str = "original"):
    """Gaussian envelope times ``exp(i k0.x)`` times a constant spinor, normalised."""
    x = grid.positions()
    center = np.broadcast_to(np.asarray(center, dtype=float), (3,))
    k0 = np.broadcast_to(np.asarray(k0, dtype=float), (3,))
    axes = [k for k in range(3) if grid.shape[k] > 1]
    r2 = sum((x[:, k] - center[k]) ** 2 for k in axes)
    env = np.exp(-r2 / (4 * width ** 2) + 1j * (x @ k0))
    phi = env[:, None] * np.asarray(spinor, dtype=complex)[None, :]
    phi /= np.linalg.norm(phi)
    return DiracField(phi, grid, basis)


class DiracPropagator:
    """Reusable propagator ``exp(-i H t)`` for one Hamiltonian on one grid."""

    def __init__(self, spec: HamiltonianSpec, grid: LatticeGeometry, method: str = "auto", tol: float = 1e-10):
        self.spec = spec
        self.grid = grid
        self.h = build_hamiltonian(spec, grid)
        defect = hermiticity_defect(self.h)
        if defect > HERMITICITY_TOL:
            raise ValueError(f"discretised Hamiltonian is not hermitean (defect {defect:.3g})")
        self.hermiticity_defect = defect
        dim = self.h.shape[0]
        if method == "auto":
            method = "exact" if dim <= EXACT_DIM_LIMIT else "gauss"
        if method not in ("exact", "gauss"):
            raise ValueError(f"unknown method {method!r}")
        self.method = method
        self.tol = tol
        self._eig = None
        self._gauss = None

    def _eigen(self):
        if self._eig is None:
            self._eig = np.linalg.eigh(self.h.toarray())
        return self._eig

    def energies(self) -> np.ndarray:
        return self._eigen()[0]

    def _integrator(self):
        if self._gauss is None:
            self._gauss = ensemble.GaussIntegrator(-1j * self.h)
        return self._gauss

    def check_step(self, dt: float, t: float) -> None:
        """Raise when a fixed ``dt`` cannot meet the tolerance over ``t``."""
        integ = self._integrator()
        n_fixed = max(1, int(math.ceil(abs(t) / dt)))
        needed = integ.n_steps(t, self.tol)
        if n_fixed < needed:
            raise StepSizeError(f"dt = {dt:.6g} too large for tolerance {self.tol:g}", abs(t) / needed)

    def apply(self, phi: np.ndarray, t: float, dt: float | None = None) -> np.ndarray:
        v = np.asarray(phi, dtype=complex).reshape(-1)
        if self.method == "exact" and dt is None:
            w, vec = self._eigen()
            return vec @ (np.exp(-1j * w * t) * (vec.conj().T @ v))
        if dt is not None:
            if dt <= 0:
                raise StepSizeError("dt must be positive", abs(t) / max(1, self._integrator().n_steps(t, self.tol)))
            self.check_step(dt, t)
            n = max(1, int(math.ceil(abs(t) / dt)))
            h = t / n
            integ = self._integrator()
            for _ in range(n):
                v = integ.step(v, h)
            return v
        return self._integrator().evolve(v, t, self.tol)

    def evolve(self, field_: DiracField, t: float, dt: float | None = None) -> DiracField:
        f = field_.to_basis(self.spec.basis)
        if f.grid != self.grid:
            raise GridMismatch("field and Hamiltonian live on different grids")
        out = self.apply(f.phi, t, dt).reshape(-1, 4)
        return DiracField(out, self.grid, self.spec.basis)


def dirac_evolve(phi: DiracField, spec: HamiltonianSpec, t: float, method: str = "auto",
                 dt: float | None = None, tol: float = 1e-10) -> DiracField:
    return DiracPropagator(spec, phi.grid, method, tol).evolve(phi, t, dt)


# --- equivalence with the classical sector evolution ---------------------------------


def crosscheck_sector(phi0: DiracField, spec: HamiltonianSpec, t: float,
                      geometry: LatticeGeometry | None = None) -> dict:
    """Maximum deviation between the sector path and the direct Dirac solver.

    The real and imaginary parts of ``phi0`` become the two flavors of one
    particle over the empty vacuum of the ``Ns = 8`` model; that state is
    evolved with the sector generator and compared with ``dirac_evolve``.
    """
    grid = phi0.grid if geometry is None else geometry
    if grid != phi0.grid:
        raise GridMismatch(f"field grid {phi0.grid.shape} differs from sector grid {grid.shape}")
    if spec.basis != "original":
        spec = replace(spec, basis="original")
    q1, q2 = phi0.real_parts()
    q = np.concatenate([q1, q2])
    gen = build_generator_sector(spec.model_params(), grid, 1)
    vac = empty_vacuum(gen.basis.n_vars)
    state, _ = one_particle_state(q, vac)
    moved = ensemble.evolve(state, gen.matrix, t, method="exact")
    qt = extract_one_particle(moved, vac)
    s = grid.n_sites * 4
    sector_phi = (qt[:s] + 1j * qt[s:]).reshape(-1, 4)
    direct = dirac_evolve(phi0.to_basis("original"), spec, t, method="exact")
    return {
        "max_deviation": float(np.max(np.abs(sector_phi - direct.phi))),
        "density_deviation": float(np.max(np.abs(np.sum(np.abs(sector_phi) ** 2, axis=1) - direct.density()))),
        "sector_dim": gen.dim,
    }


# --- dispersion ----------------------------------------------------------------------


def lattice_momenta(grid: LatticeGeometry) -> np.ndarray:
    """All periodic wave vectors ``(S, 3)`` with ``k_j = 2 pi n / (N_j a)``."""
    a = grid.spacing
    ks = [2 * np.pi * np.arange(n) / (n * a) for n in grid.shape]
    mesh = np.meshgrid(*ks, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def lattice_dispersion(grid: LatticeGeometry, m: float = 0.0) -> np.ndarray:
    """``omega(k) = sqrt(m^2 + sum_active sin^2(k_j a) / a^2)`` for every wave vector."""
    a = grid.spacing
    k = lattice_momenta(grid)
    s2 = np.zeros(k.shape[0])
    for j in range(3):
        if grid.shape[j] > 2:
            s2 += np.sin(k[:, j] * a) ** 2 / a ** 2
    return np.sqrt(m * m + s2)


def plane_wave(grid: LatticeGeometry, k_index, spec: HamiltonianSpec, branch: int = +1) -> tuple[DiracField, float]:
    """Positive (or negative) frequency plane wave at lattice momentum ``k_index``.

    Returns the field and the analytic frequency.  The spinor is an eigenvector
    of the momentum-space Hamiltonian ``-sum_j T_j sin(k_j a)/a + m gamma^0 gamma_bar``.
    """
    alg = build_spinor_algebra()
    a = grid.spacing
    kvec = np.array([2 * np.pi * int(n) / (N * a) for n, N in zip(k_index, grid.shape)])
    hk = 1j * (-spec.m * alg.mass_matrix).astype(complex)
    for j in range(3):
        if grid.shape[j] > 2:
            hk = hk - alg.T[j] * np.sin(kvec[j] * a) / a
    w, v = np.linalg.eigh(hk)
    idx = int(np.argmax(w)) if branch > 0 else int(np.argmin(w))
    x = grid.positions()
    phase = np.exp(1j * (x @ kvec))
    phi = phase[:, None] * v[:, idx][None, :]
    phi /= np.linalg.norm(phi)
    return DiracField(phi, grid), float(w[idx])


def measured_frequency(phi0: DiracField, spec: HamiltonianSpec, t: float) -> float:
    """Frequency from the overlap phase ``<phi0 | phi(t)> = exp(-i omega t)`` of an eigenmode."""
    phit = dirac_evolve(phi0, spec, t, method="exact")
    overlap = np.vdot(phi0.phi.ravel(), phit.phi.ravel())
    return float(-np.angle(overlap) / t)


# --- non-relativistic reduction ------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Uniform Cartesian grid with coordinates centred on zero (exactly symmetric)."""

    shape: tuple
    spacing: float

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        if not 1 <= len(shape) <= 3 or min(shape) < 1:
            raise ConfigError(f"grid shape must have 1 to 3 positive entries, got {self.shape}")
        if not self.spacing > 0:
            raise ConfigError("grid spacing must be positive")
        object.__setattr__(self, "shape", shape)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    def axis(self, k: int) -> np.ndarray:
        n = self.shape[k]
        return (np.arange(n) - (n - 1) / 2.0) * self.spacing

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*[self.axis(k) for k in range(self.ndim)], indexing="ij")

    def wavenumbers(self) -> list[np.ndarray]:
        return np.meshgrid(*[2 * np.pi * np.fft.fftfreq(n, self.spacing) for n in self.shape], indexing="ij")

    @classmethod
    def from_lattice(cls, grid: LatticeGeometry) -> "Grid":
        active = tuple(n for n in grid.shape if n > 1) or (1,)
        return cls(active, grid.spacing)


@dataclass(frozen=True)
class SchrodingerField:
    """Scalar (``psi.shape == grid.shape``) or two-component (trailing axis 2) field."""

    psi: np.ndarray
    grid: Grid
    M: float = 1.0
    V: object = 0.0

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=complex)
        if psi.shape[: self.grid.ndim] != self.grid.shape:
            raise ValueError(f"field shape {psi.shape} does not fit grid {self.grid.shape}")
        if psi.ndim not in (self.grid.ndim, self.grid.ndim + 1):
            raise ValueError("field must be scalar or carry one spin axis")
        if not self.M > 0:
            raise ConfigError("mass M must be positive")
        object.__setattr__(self, "psi", psi)

    @property
    def spinor(self) -> bool:
        return self.psi.ndim == self.grid.ndim + 1

    def density(self) -> np.ndarray:
        a = np.abs(self.psi) ** 2
        return a.sum(axis=-1) if self.spinor else a

    def norm(self) -> float:
        return float(self.density().sum())

    def potential(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.V, dtype=float), self.grid.shape)


def _momentum_ops(grid: LatticeGeometry) -> list[tuple[sp.csr_matrix, int]]:
    """``p_k = -i D_k`` on the active axes."""
    return [(-1j * difference_matrix(grid, k + 1), k) for k in range(3) if grid.shape[k] > 2]


def lower_from_upper(chi: np.ndarray, grid: LatticeGeometry, M: float) -> np.ndarray:
    """``rho = sigma_k^dag p_k chi / (2M)`` for upper components ``chi`` of shape ``(S, 2)``."""
    sigma = build_spinor_algebra().sigma
    out = np.zeros_like(chi, dtype=complex)
    for p, k in _momentum_ops(grid):
        out += (p @ chi) @ sigma[k].conj()     # rows: sigma^dag (p chi)
    return out / (2 * M)


@dataclass
class Reduction:
    field: SchrodingerField
    residual: float
    velocity_ratio: float
    potential_ratio: float


def nonrel_reduce(phi: DiracField, spec: HamiltonianSpec, t: float = 0.0) -> Reduction:
    """Upper components with the rest phase removed, ``psi = exp(i M t) chi``.

    The residual ``||rho - A chi||`` measures how well the lower components are
    slaved to the upper ones; ``velocity_ratio`` (``<|p|>/M``) and
    ``potential_ratio`` (``max|V|/M``) are reported, not enforced.
    """
    M = spec.m
    if M == 0:
        raise ValueError("no non-relativistic limit for M = 0")
    d = phi.to_basis("diagonal")
    chi, rho = d.phi[:, :2], d.phi[:, 2:]
    residual = float(np.linalg.norm(rho - lower_from_upper(chi, d.grid, M)))
    pchi = sum(np.linalg.norm(p @ chi) ** 2 for p, _ in _momentum_ops(d.grid))
    a0, _ = spec.model_params().potentials(d.grid)
    g = Grid.from_lattice(d.grid)
    psi = (np.exp(1j * M * t) * chi).reshape(g.shape + (2,))
    v = (spec.e * a0).reshape(g.shape)
    norm = float(np.sum(np.abs(psi) ** 2))
    field_ = SchrodingerField(psi, g, abs(M), v)
    return Reduction(field_, residual, math.sqrt(pchi / max(norm, 1e-300)) / abs(M),
                     float(np.max(np.abs(v), initial=0.0)) / abs(M))


def positive_energy_packet(grid: LatticeGeometry, spec: HamiltonianSpec, center, width, k0,
                           spin=(1.0, 0.0)) -> DiracField:
    """Gaussian upper components with leading-order lower components, in the diagonal basis."""
    g = gaussian_dirac_packet(grid, center, width, k0, [spin[0], spin[1], 0, 0], "diagonal")
    chi = g.phi[:, :2]
    phi = np.concatenate([chi, lower_from_upper(chi, grid, spec.m)], axis=1)
    return DiracField(phi / np.linalg.norm(phi), grid, "diagonal")


def nonrel_sweep(masses, tau: float = 2.0, n_sites: int = 256, delta: float = 0.25,
                 width: float = 4.0, k0: float = 1.0) -> list[dict]:
    """Dirac-vs-Schroedinger density L1 distance at ``t = tau M`` for each mass.

    Both paths use the same lattice; the Schroedinger side uses the lattice
    dispersion ``sin^2(k a)/a^2`` that the symmetric difference implies.
    """
    grid = LatticeGeometry.line(n_sites, delta=delta)
    center = (0.0, 0.0, grid.spacing * n_sites / 2)
    out = []
    for M in masses:
        spec = HamiltonianSpec(m=float(M), basis="diagonal")
        phi0 = positive_energy_packet(grid, spec, center, width, (0.0, 0.0, k0))
        t = tau * M
        phit = dirac_evolve(phi0, spec, t, method="exact")
        red0 = nonrel_reduce(phi0, spec, 0.0)
        psi0 = red0.field
        psi0 = replace(psi0, psi=psi0.psi / math.sqrt(psi0.norm()))
        psit = schrodinger_evolve(psi0, t, dispersion="lattice")
        l1 = float(np.sum(np.abs(phit.density() - psit.density().ravel())))
        out.append({"M": float(M), "t": t, "l1": l1, "residual": nonrel_reduce(phit, spec, t).residual,
                    "velocity_ratio": red0.velocity_ratio,
                    "norm_drift": abs(phit.norm() - 1.0)})
    return out


# --- Schroedinger propagation --------------------------------------------------------


def kinetic_symbol(grid: Grid, M: float, dispersion: str) -> np.ndarray:
    ks = grid.wavenumbers()
    a = grid.spacing
    if dispersion == "exact":
        k2 = sum(k ** 2 for k in ks)
    elif dispersion == "lattice":
        k2 = sum(np.sin(k * a) ** 2 / a ** 2 for k in ks)
    else:
        raise ConfigError(f"dispersion must be 'exact' or 'lattice', got {dispersion!r}")
    return k2 / (2 * M)


def laplacian(grid: Grid) -> sp.csr_matrix:
    """Periodic 3-point Laplacian on the grid (row-major flattening)."""
    mats = []
    for k, n in enumerate(grid.shape):
        d2 = sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], format="lil")
        if n > 2:
            d2[0, n - 1] = 1
            d2[n - 1, 0] = 1
        d2 = d2.tocsr() / grid.spacing ** 2
        eyes = [sp.identity(m) for m in grid.shape]
        eyes[k] = d2
        op = eyes[0]
        for e in eyes[1:]:
            op = sp.kron(op, e, format="csr")
        mats.append(op)
    return sum(mats).tocsr()


def schrodinger_hamiltonian(grid: Grid, M: float, V) -> sp.csr_matrix:
    v = np.broadcast_to(np.asarray(V, dtype=float), grid.shape).ravel()
    return (-laplacian(grid) / (2 * M) + sp.diags(v)).tocsr()


def energy(field_: SchrodingerField) -> float:
    """``<psi|H|psi>`` with the finite-difference Hamiltonian (the Crank-Nicolson one)."""
    h = schrodinger_hamiltonian(field_.grid, field_.M, field_.V)
    psi = field_.psi.reshape(int(np.prod(field_.grid.shape)), -1)
    return float(np.real(np.sum(psi.conj() * (h @ psi))))


def schrodinger_evolve(field_: SchrodingerField, t: float, scheme: str = "split", dt: float | None = None,
                       dispersion: str = "exact", max_phase: float = math.pi, callback=None,
                       every: int = 1) -> SchrodingerField:
    """Unitary propagation of ``i d psi/dt = (p^2/2M + V) psi``.

    ``split``: Strang splitting with the kinetic factor applied exactly in
    Fourier space (``dispersion`` ``exact`` ``k^2`` or ``lattice`` ``sin^2(ka)/a^2``).
    Requires ``dt * (max V - min V) <= max_phase``.
    ``cn``: Crank-Nicolson with the finite-difference Hamiltonian; conserves
    ``<H>`` exactly.  Requires ``dt * E_band <= 1`` where ``E_band`` is the
    packet's energy scale ``|<H>| + 3 sigma_H``.
    ``callback(step, time, field)`` is called every ``every`` steps.
    """
    grid, M = field_.grid, field_.M
    v = field_.potential()
    spin_axes = (slice(None),) * grid.ndim + ((None,) if field_.spinor else ())
    psi = field_.psi.copy()
    if scheme == "split":
        spread = float(v.max() - v.min())
        if dt is None:
            if spread == 0:
                n = 1
            else:
                n = max(1, int(math.ceil(abs(t) * spread / (0.1 * max_phase))))
            dt_ = t / n
        else:
            if dt <= 0 or dt * spread > max_phase:
                raise StepSizeError("split-step phase of the potential exceeds the limit",
                                    max_phase / spread if spread else abs(t))
            n = max(1, int(round(abs(t) / dt)))
            dt_ = t / n
        kin = np.exp(-1j * kinetic_symbol(grid, M, dispersion) * dt_)[spin_axes]
        half_v = np.exp(-0.5j * v * dt_)[spin_axes]
        fft_axes = tuple(range(grid.ndim))
        for step in range(n):
            psi = half_v * psi
            psi = np.fft.ifftn(kin * np.fft.fftn(psi, axes=fft_axes), axes=fft_axes)
            psi = half_v * psi
            if callback is not None and (step + 1) % every == 0:
                callback(step + 1, (step + 1) * dt_, SchrodingerField(psi, grid, M, field_.V))
        return SchrodingerField(psi, grid, M, field_.V)
    if scheme == "cn":
        h = schrodinger_hamiltonian(grid, M, v)
        flat = psi.reshape(int(np.prod(grid.shape)), -1)
        hp = h @ flat
        e_mean = float(np.real(np.sum(flat.conj() * hp)))
        e2 = float(np.real(np.sum(hp.conj() * hp)))
        band = abs(e_mean) + 3 * math.sqrt(max(e2 - e_mean ** 2, 0.0))
        if dt is None:
            n = max(1, int(math.ceil(abs(t) * band / 0.05)))
        else:
            if dt <= 0 or dt * band > 1.0:
                raise StepSizeError("Crank-Nicolson step does not resolve the packet energy band",
                                    1.0 / band if band else abs(t))
            n = max(1, int(round(abs(t) / dt)))
        dt_ = t / n
        eye = sp.identity(h.shape[0], format="csc")
        lu = spla.splu((eye + 0.5j * dt_ * h).tocsc())
        rhs_op = (eye - 0.5j * dt_ * h).tocsr()
        for step in range(n):
            flat = lu.solve(rhs_op @ flat)
            if callback is not None and (step + 1) % every == 0:
                callback(step + 1, (step + 1) * dt_, SchrodingerField(flat.reshape(psi.shape), grid, M, field_.V))
        return SchrodingerField(flat.reshape(psi.shape), grid, M, field_.V)
    raise ConfigError(f"unknown scheme {scheme!r}")


def gaussian_packet(grid: Grid, center, width, k0, M: float = 1.0, V=0.0) -> SchrodingerField:
    """``exp(-(x - x0)^2 / (4 sigma^2) + i k0 x)``, normalised to unit sum."""
    center = np.broadcast_to(np.asarray(center, dtype=float), (grid.ndim,))
    width = np.broadcast_to(np.asarray(width, dtype=float), (grid.ndim,))
    k0 = np.broadcast_to(np.asarray(k0, dtype=float), (grid.ndim,))
    mesh = grid.mesh()
    expo = sum(-(x - c) ** 2 / (4 * w ** 2) + 1j * k * x for x, c, w, k in zip(mesh, center, width, k0))
    psi = np.exp(expo)
    psi /= math.sqrt(float(np.sum(np.abs(psi) ** 2)))
    return SchrodingerField(psi, grid, M, V)


def moments(field_: SchrodingerField) -> dict:
    """Mean position and variance per axis from the density."""
    w = field_.density()
    w = w / w.sum()
    mesh = field_.grid.mesh()
    mean = np.array([float(np.sum(w * x)) for x in mesh])
    var = np.array([float(np.sum(w * (x - m) ** 2)) for x, m in zip(mesh, mean)])
    return {"mean": mean, "var": var}


# --- demos ---------------------------------------------------------------------------


def _from_dict(cls, data: dict | None):
    data = dict(data or {})
    names = {f.name for f in cls.__dataclass_fields__.values()}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {', '.join(unknown)}")
    for k, v in list(data.items()):
        if isinstance(v, list):
            data[k] = tuple(v)
    return cls(**data)


@dataclass(frozen=True)
class DoubleSlitConfig:
    shape: tuple = (384, 512)          # (x, y) points
    spacing: float = 0.1
    M: float = 1.0
    k0: float = 5.0
    start: float = -8.0                # packet centre on x
    width: tuple = (2.0, 4.0)          # packet sigma along x and y
    barrier_x: float = 0.0
    barrier_thickness: float = 0.5
    barrier_height: float = 200.0
    slit_centers: tuple = (-1.5, 1.5)
    slit_width: float = 1.0
    detector_x: float = 8.0
    t_end: float = 4.5
    dt: float = 0.005
    frames: int = 6
    frame_stride: int = 4              # spatial subsampling of CSV frames

    def __post_init__(self):
        if len(self.shape) != 2:
            raise ConfigError("double slit needs a 2d grid")
        if self.slit_width <= 0:
            raise ConfigError("slit_width must be positive")
        c = sorted(self.slit_centers)
        if not c:
            raise ConfigError("at least one slit is required")
        for a, b in zip(c, c[1:]):
            if b - a < self.slit_width:
                raise ConfigError(f"slits at {a} and {b} overlap for width {self.slit_width}")
        if not self.barrier_x + self.barrier_thickness < self.detector_x:
            raise ConfigError("detector line must lie behind the barrier")

    def grid(self) -> Grid:
        return Grid(self.shape, self.spacing)

    def potential(self) -> np.ndarray:
        x, y = self.grid().mesh()
        wall = (x >= self.barrier_x) & (x < self.barrier_x + self.barrier_thickness)
        open_ = np.zeros_like(wall)
        for c in self.slit_centers:
            open_ |= np.abs(y - c) < self.slit_width / 2
        return np.where(wall & ~open_, self.barrier_height, 0.0)


def fringe_report(y: np.ndarray, intensity: np.ndarray, prominence: float = 0.05) -> dict:
    """Central-fringe contrast and the number of resolved maxima of a line profile."""
    i = np.asarray(intensity, dtype=float)
    peaks, _ = find_peaks(i, prominence=prominence * i.max())
    troughs, _ = find_peaks(-i, prominence=prominence * i.max())
    if peaks.size == 0:
        return {"contrast": 0.0, "n_maxima": 0, "central_max_y": None}
    central = peaks[np.argmin(np.abs(y[peaks]))]
    left = troughs[troughs < central]
    right = troughs[troughs > central]
    neighbours = []
    if left.size:
        neighbours.append(i[left[-1]])
    if right.size:
        neighbours.append(i[right[0]])
    i_min = max(neighbours) if neighbours else float(i.min())
    i_max = float(i[central])
    return {"contrast": float((i_max - i_min) / (i_max + i_min)), "n_maxima": int(peaks.size),
            "central_max_y": float(y[central])}


@dataclass
class DemoResult:
    metrics: dict
    frames: list = field(default_factory=list)        # (t, density array)
    profile: tuple | None = None                      # (coordinate, intensity)
    grid: Grid | None = None


def demo_double_slit(config: DoubleSlitConfig | dict | None = None, keep_frames: bool = True) -> DemoResult:
    """Packet through a two-slit barrier; time-integrated intensity on a detector line."""
    cfg = config if isinstance(config, DoubleSlitConfig) else _from_dict(DoubleSlitConfig, config)
    grid = cfg.grid()
    v = cfg.potential()
    psi0 = gaussian_packet(grid, (cfg.start, 0.0), cfg.width, (cfg.k0, 0.0), cfg.M, v)
    xs = grid.axis(0)
    ys = grid.axis(1)
    col = int(np.argmin(np.abs(xs - cfg.detector_x)))
    n_steps = max(1, int(round(cfg.t_end / cfg.dt)))
    frame_every = max(1, n_steps // max(1, cfg.frames))
    intensity = np.zeros(grid.shape[1])
    frames = []

    def record(step, t, f):
        nonlocal intensity
        w = np.abs(f.psi) ** 2
        intensity += w[col] * cfg.dt
        if keep_frames and step % frame_every == 0:
            frames.append((t, w))

    out = schrodinger_evolve(psi0, cfg.t_end, dt=cfg.dt, callback=record)
    report = fringe_report(ys, intensity)
    sym = float(np.max(np.abs(intensity - intensity[::-1])) / intensity.max())
    final_sym = float(np.max(np.abs(out.density() - out.density()[:, ::-1])))
    metrics = {
        **report,
        "symmetric_slits": bool(np.allclose(sorted(cfg.slit_centers), sorted(-c for c in cfg.slit_centers))),
        "profile_asymmetry": sym,
        "density_asymmetry": final_sym,
        "norm_drift": abs(out.norm() - 1.0),
        "detector_x": float(xs[col]),
        "transmitted_fraction": float(out.density()[xs > cfg.barrier_x + cfg.barrier_thickness].sum()),
        "config": _config_dict(cfg),
    }
    return DemoResult(metrics, frames, (ys, intensity), grid)


@dataclass(frozen=True)
class TunnelingConfig:
    n: int = 16384
    spacing: float = 0.05
    M: float = 1.0
    k0: float = 2.0
    sigma_k_ratio: float = 0.025       # sigma_k / k0
    energy_ratio: float = 0.5          # E / V0
    kappa_w: float = 2.0
    width: float | None = None         # overrides kappa_w
    start: float = -100.0
    t_end: float | None = None
    dt: float = 0.01
    frames: int = 5

    def __post_init__(self):
        if self.k0 <= 0 or self.sigma_k_ratio <= 0:
            raise ConfigError("k0 and sigma_k_ratio must be positive")
        if self.energy_ratio < 0:
            raise ConfigError("energy_ratio must be non-negative (0 for no barrier)")
        if self.width is not None and self.width < 0:
            raise ConfigError("barrier width must be non-negative")

    @property
    def energy(self) -> float:
        return self.k0 ** 2 / (2 * self.M)

    @property
    def barrier_height(self) -> float:
        return 0.0 if self.energy_ratio == 0 else self.energy / self.energy_ratio

    @property
    def kappa(self) -> float:
        return math.sqrt(max(2 * self.M * (self.barrier_height - self.energy), 0.0))

    @property
    def barrier_width(self) -> float:
        if self.width is not None:
            return self.width
        return self.kappa_w / self.kappa if self.kappa > 0 else 0.0


def analytic_transmission(E: float, V0: float, w: float, M: float = 1.0) -> float:
    """Plane-wave transmission through a rectangular barrier (``E < V0``, ``E > V0`` or ``V0 = 0``)."""
    if V0 == 0 or w == 0:
        return 1.0
    if E < V0:
        kappa = math.sqrt(2 * M * (V0 - E))
        return 1.0 / (1.0 + V0 ** 2 * math.sinh(kappa * w) ** 2 / (4 * E * (V0 - E)))
    if E == V0:
        return 1.0 / (1.0 + M * V0 * w * w / 2)
    k = math.sqrt(2 * M * (E - V0))
    return 1.0 / (1.0 + V0 ** 2 * math.sin(k * w) ** 2 / (4 * E * (E - V0)))


def demo_tunneling(config: TunnelingConfig | dict | None = None, keep_frames: bool = True) -> DemoResult:
    cfg = config if isinstance(config, TunnelingConfig) else _from_dict(TunnelingConfig, config)
    grid = Grid((cfg.n,), cfg.spacing)
    x = grid.axis(0)
    w = cfg.barrier_width
    v = np.where((x >= 0) & (x < w), cfg.barrier_height, 0.0) if w > 0 else np.zeros_like(x)
    sigma_x = 1.0 / (2 * cfg.sigma_k_ratio * cfg.k0)
    psi0 = gaussian_packet(grid, cfg.start, sigma_x, cfg.k0, cfg.M, v)
    speed = cfg.k0 / cfg.M
    t_end = cfg.t_end if cfg.t_end is not None else 2 * abs(cfg.start) / speed
    frames = []
    n_steps = max(1, int(round(t_end / cfg.dt)))
    every = max(1, n_steps // max(1, cfg.frames))

    def record(step, t, f):
        if keep_frames:
            frames.append((t, np.abs(f.psi) ** 2))

    out = schrodinger_evolve(psi0, t_end, dt=cfg.dt, callback=record, every=every)
    dens = out.density()
    transmitted = float(dens[x >= w].sum())
    analytic = analytic_transmission(cfg.energy, cfg.barrier_height, w, cfg.M)
    metrics = {
        "T": transmitted,
        "T_analytic": analytic,
        "relative_error": abs(transmitted - analytic) / analytic if analytic else None,
        "reflected": float(dens[x < 0].sum()),
        "barrier_height": cfg.barrier_height,
        "barrier_width": w,
        "energy": cfg.energy,
        "norm_drift": abs(out.norm() - 1.0),
        "t_end": t_end,
        "config": _config_dict(cfg),
    }
    return DemoResult(metrics, frames, (x, dens), grid)


POTENTIALS = ("slit", "barrier", "well", "custom-grid")
_POTENTIAL_FIELDS = {
    "barrier": {"x0": 0.0, "width": 1.0, "height": 1.0},
    "well": {"center": 0.0, "width": 1.0, "depth": 1.0},
    "slit": {"x0": 0.0, "thickness": 0.5, "height": 200.0, "centers": [-1.5, 1.5], "slit_width": 1.0,
             "detector_x": None},
    "custom-grid": {"values": None},
}
_SECTIONS = {
    "grid": {"shape": None, "spacing": 0.1},
    "packet": {"center": 0.0, "width": 1.0, "momentum": 0.0, "M": 1.0},
    "integrator": {"t_end": 1.0, "dt": None, "scheme": "split", "dispersion": "exact", "tolerance": 1e-9,
                   "frames": 5},
}


def _section(cfg: dict, name: str, defaults: dict) -> dict:
    data = cfg.get(name, {})
    if not isinstance(data, dict):
        raise ConfigError(f"{name} must be a table")
    unknown = sorted(set(data) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown {name} fields: {', '.join(unknown)}")
    return {**defaults, **data}


def resolve_scenario(cfg: dict) -> dict:
    """Fill defaults and validate a Schroedinger scenario before any compute."""
    unknown = sorted(set(cfg) - {"grid", "packet", "potential", "integrator"})
    if unknown:
        raise ConfigError(f"unknown scenario sections: {', '.join(unknown)}")
    out = {name: _section(cfg, name, d) for name, d in _SECTIONS.items()}
    pot = cfg.get("potential", {})
    if not isinstance(pot, dict):
        raise ConfigError("potential must be a table")
    kind = pot.get("type")
    if kind not in POTENTIALS:
        raise ConfigError(f"potential.type must be one of {', '.join(POTENTIALS)}, got {kind!r}")
    params = {k: v for k, v in pot.items() if k != "type"}
    out["potential"] = {"type": kind, **_section({"potential": params}, "potential", _POTENTIAL_FIELDS[kind])}
    g = out["grid"]
    if g["shape"] is None:
        raise ConfigError("grid.shape is required")
    g["shape"] = [int(n) for n in np.atleast_1d(g["shape"])]
    if not 1 <= len(g["shape"]) <= 3 or min(g["shape"]) < 2:
        raise ConfigError("grid.shape must list 1 to 3 axes of at least 2 points")
    if not g["spacing"] > 0:
        raise ConfigError("grid.spacing must be positive")
    d = len(g["shape"])
    pk = out["packet"]
    for key in ("center", "width", "momentum"):
        vals = np.atleast_1d(np.asarray(pk[key], dtype=float))
        if vals.size not in (1, d):
            raise ConfigError(f"packet.{key} must have 1 or {d} entries")
        pk[key] = np.broadcast_to(vals, (d,)).tolist()
    if min(pk["width"]) <= 0 or not pk["M"] > 0:
        raise ConfigError("packet.width and packet.M must be positive")
    it = out["integrator"]
    if not it["t_end"] > 0:
        raise ConfigError("integrator.t_end must be positive")
    if it["dt"] is not None and not it["dt"] > 0:
        raise ConfigError("integrator.dt must be positive")
    if it["scheme"] not in ("split", "cn"):
        raise ConfigError(f"integrator.scheme must be 'split' or 'cn', got {it['scheme']!r}")
    if it["dispersion"] not in ("exact", "lattice"):
        raise ConfigError(f"integrator.dispersion must be 'exact' or 'lattice', got {it['dispersion']!r}")
    if not it["tolerance"] > 0 or int(it["frames"]) < 0:
        raise ConfigError("integrator.tolerance must be positive and integrator.frames non-negative")
    p = out["potential"]
    if kind in ("barrier", "well", "slit") and p.get("width", p.get("thickness")) <= 0:
        raise ConfigError(f"potential width must be positive for {kind}")
    if kind == "slit":
        if d != 2:
            raise ConfigError("slit potential needs a 2d grid")
        c = sorted(p["centers"])
        if not c or p["slit_width"] <= 0:
            raise ConfigError("slit potential needs at least one slit of positive slit_width")
        for a, b in zip(c, c[1:]):
            if b - a < p["slit_width"]:
                raise ConfigError(f"slits at {a} and {b} overlap for width {p['slit_width']}")
        if p["detector_x"] is None:
            p["detector_x"] = p["x0"] + p["thickness"] + 2 * max(pk["width"])
        if not p["detector_x"] > p["x0"] + p["thickness"]:
            raise ConfigError("potential.detector_x must lie behind the barrier")
    if kind == "custom-grid":
        if p["values"] is None or np.shape(p["values"]) != tuple(g["shape"]):
            raise ConfigError(f"potential.values must be an array of shape {tuple(g['shape'])}")
    return out


def scenario_potential(grid: Grid, pot: dict) -> np.ndarray:
    mesh = grid.mesh()
    x = mesh[0]
    kind = pot["type"]
    if kind == "barrier":
        return np.where((x >= pot["x0"]) & (x < pot["x0"] + pot["width"]), float(pot["height"]), 0.0)
    if kind == "well":
        c = np.broadcast_to(np.asarray(pot["center"], dtype=float), (grid.ndim,))
        inside = np.all([np.abs(m - ck) < pot["width"] / 2 for m, ck in zip(mesh, c)], axis=0)
        return np.where(inside, -float(pot["depth"]), 0.0)
    if kind == "slit":
        y = mesh[1]
        wall = (x >= pot["x0"]) & (x < pot["x0"] + pot["thickness"])
        open_ = np.zeros_like(wall)
        for c in pot["centers"]:
            open_ |= np.abs(y - c) < pot["slit_width"] / 2
        return np.where(wall & ~open_, float(pot["height"]), 0.0)
    return np.asarray(pot["values"], dtype=float)


def run_scenario(cfg: dict, keep_frames: bool = True) -> DemoResult:
    """Propagate a Gaussian packet through a configured potential.

    Reports the norm drift and, by potential type, the transmitted probability
    (``barrier``) or the detector-line fringe contrast (``slit``).
    """
    conf = resolve_scenario(cfg)
    grid = Grid(tuple(conf["grid"]["shape"]), conf["grid"]["spacing"])
    pot = conf["potential"]
    v = scenario_potential(grid, pot)
    pk, it = conf["packet"], conf["integrator"]
    psi0 = gaussian_packet(grid, pk["center"], pk["width"], pk["momentum"], pk["M"], v)
    frames = []
    det = None
    if pot["type"] == "slit":
        det = {"col": int(np.argmin(np.abs(grid.axis(0) - pot["detector_x"]))), "t": 0.0,
               "intensity": np.zeros(grid.shape[1])}
    n_frames = int(it["frames"])
    pending = list(np.linspace(0, it["t_end"], n_frames + 1)[1:]) if keep_frames else []

    def record(step, t, f):
        w = np.abs(f.psi) ** 2
        if w.ndim > grid.ndim:
            w = w.sum(axis=-1)
        if det is not None:
            det["intensity"] += w[det["col"]] * (t - det["t"])
            det["t"] = t
        if pending and t >= pending[0] - 1e-9 * it["t_end"]:
            frames.append((t, w))
            while pending and t >= pending[0] - 1e-9 * it["t_end"]:
                pending.pop(0)

    if keep_frames and n_frames:
        frames.append((0.0, psi0.density()))
    callback = record if det is not None or pending else None
    out = schrodinger_evolve(psi0, it["t_end"], scheme=it["scheme"], dt=it["dt"], dispersion=it["dispersion"],
                             callback=callback)
    drift = abs(out.norm() - 1.0)
    mom = moments(out)
    metrics = {"norm_drift": drift, "norm_ok": bool(drift < it["tolerance"]),
               "mean": mom["mean"].tolist(), "var": mom["var"].tolist(), "config": conf}
    if it["scheme"] == "cn":
        metrics["energy_drift"] = abs(energy(out) - energy(psi0))
    profile = None
    if pot["type"] == "barrier":
        x = grid.mesh()[0]
        metrics["T"] = float(out.density()[x >= pot["x0"] + pot["width"]].sum())
        metrics["reflected"] = float(out.density()[x < pot["x0"]].sum())
    if det is not None:
        ys = grid.axis(1)
        metrics.update(fringe_report(ys, det["intensity"]))
        metrics["detector_x"] = float(grid.axis(0)[det["col"]])
        profile = (ys, det["intensity"])
    return DemoResult(metrics, frames, profile, grid)


def _config_dict(cfg) -> dict:
    out = {}
    for k, v in asdict(cfg).items():
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def write_density_frames(path, grid: Grid, frames, stride: int = 1) -> None:
    """CSV rows ``(x[, y], t, w)`` for each stored frame."""
    axes = [grid.axis(k)[::stride] for k in range(grid.ndim)]
    names = ["x", "y", "z"][: grid.ndim]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(names + ["t", "w"])
        for t, dens in frames:
            sub = dens[tuple(slice(None, None, stride) for _ in range(grid.ndim))]
            mesh = np.meshgrid(*axes, indexing="ij")
            for idx in np.ndindex(sub.shape):
                wr.writerow([format(float(m[idx]), ".10g") for m in mesh]
                            + [format(float(t), ".10g"), format(float(sub[idx]), ".17g")])
