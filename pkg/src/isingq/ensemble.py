"""Classical probabilities, signs and the orthogonal evolution of the wave function.

The classical wave function is ``q_tau = s_tau sqrt(p_tau)``; its evolution is a
rotation ``q(t) = R(t) q(0)`` generated by a real antisymmetric ``K``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

NORM_TOL = 1e-9
EXACT_DIM_LIMIT = 512


class NotAntisymmetric(ValueError):
    pass


def _vector(q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(-1)
    if not np.all(np.isfinite(q)):
        raise ValueError("wave function has non-finite entries")
    return q


@dataclass(frozen=True)
class ClassicalWaveFunction:
    q: np.ndarray
    basis: object = None

    def __post_init__(self):
        q = _vector(self.q)
        n2 = float(q @ q)
        if abs(n2 - 1.0) > NORM_TOL:
            raise ValueError(f"wave function not normalised: sum q^2 = {n2:.12g}")
        object.__setattr__(self, "q", q)

    @property
    def p(self) -> np.ndarray:
        return self.q * self.q


@dataclass(frozen=True)
class ProbabilityDistribution:
    p: np.ndarray

    def __post_init__(self):
        p = _vector(self.p)
        if np.any(p < 0):
            raise ValueError(f"negative probability {p.min():.3g}")
        if abs(p.sum() - 1.0) > NORM_TOL:
            raise ValueError(f"probabilities sum to {p.sum():.12g}, not 1")
        object.__setattr__(self, "p", p)


@dataclass(frozen=True)
class SignVector:
    s: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.int8).reshape(-1)
        if not np.all((s == 1) | (s == -1)):
            raise ValueError("sign entries must be +1 or -1")
        object.__setattr__(self, "s", s)


def signs_of(q) -> np.ndarray:
    """``sign(q)`` with the gauge choice ``+1`` at exact zeros."""
    return np.where(np.asarray(q) < 0, -1, 1).astype(np.int8)


def split(q) -> tuple[ProbabilityDistribution, SignVector]:
    q = q.q if isinstance(q, ClassicalWaveFunction) else _vector(q)
    return ProbabilityDistribution(q * q), SignVector(signs_of(q))


def join(p, s, basis=None) -> ClassicalWaveFunction:
    p = p if isinstance(p, ProbabilityDistribution) else ProbabilityDistribution(p)
    s = s if isinstance(s, SignVector) else SignVector(s)
    if p.p.shape != s.s.shape:
        raise ValueError("probability and sign vectors differ in length")
    return ClassicalWaveFunction(s.s * np.sqrt(p.p), basis)


# --- orthogonal evolution ------------------------------------------------------------


def _generator_matrix(k):
    mat = getattr(k, "matrix", k)
    if sp.issparse(mat):
        mat = mat.tocsr()
        return mat if np.iscomplexobj(mat.data) else mat.astype(float)
    mat = np.asarray(mat)
    return mat if np.iscomplexobj(mat) else mat.astype(float)


def antisymmetry_defect(k) -> float:
    """``max |K + K^dag|``; for real ``K`` this is the antisymmetry defect."""
    mat = _generator_matrix(k)
    d = mat + mat.conj().T
    if sp.issparse(d):
        return float(np.max(np.abs(d.data), initial=0.0))
    return float(np.max(np.abs(d), initial=0.0))


def _check_antisymmetric(mat) -> None:
    scale = float(abs(mat).max()) if mat.shape[0] else 0.0
    defect = antisymmetry_defect(mat)
    if defect > 1e-12 * max(1.0, scale):
        raise NotAntisymmetric(f"generator is not antisymmetric (defect {defect:.3g})")


@dataclass
class _Propagator:
    """``exp(K t)`` from the eigendecomposition of the hermitean ``iK``."""

    w: np.ndarray
    v: np.ndarray

    @classmethod
    def build(cls, mat) -> "_Propagator":
        dense = mat.toarray() if sp.issparse(mat) else mat
        w, v = np.linalg.eigh(1j * dense)
        return cls(w, v)

    def apply(self, q, t) -> np.ndarray:
        c = self.v.conj().T @ q
        return (self.v @ (np.exp(-1j * self.w * t) * c)).real

    def matrix(self, t) -> np.ndarray:
        return ((self.v * np.exp(-1j * self.w * t)) @ self.v.conj().T).real


def pade_roots(s: int) -> np.ndarray:
    """Roots of the denominator of the diagonal ``(s, s)`` Pade approximant of ``exp``."""
    coeffs = [math.factorial(2 * s - k) * math.factorial(s)
              / (math.factorial(2 * s) * math.factorial(k) * math.factorial(s - k)) * (-1) ** k
              for k in range(s + 1)]
    return np.roots(coeffs[::-1])


def pade_error_constant(s: int) -> float:
    return math.factorial(s) ** 2 / (math.factorial(2 * s) * math.factorial(2 * s + 1))


def spectral_radius(mat) -> float:
    """Largest ``|lambda|`` of an antisymmetric matrix (equal to its 2-norm)."""
    n = mat.shape[0]
    if n <= 64:
        dense = mat.toarray() if sp.issparse(mat) else mat
        return float(np.linalg.norm(dense, 2))
    try:
        sv = spla.svds(mat, k=1, return_singular_vectors=False, tol=1e-6, random_state=0)
        return float(sv[0]) * (1 + 1e-4)
    except Exception:
        return float(abs(mat).sum(axis=0).max())


class GaussIntegrator:
    """Gauss-Legendre collocation with ``s`` stages for ``dq/dt = K q``.

    For a linear system the step operator is the diagonal Pade approximant
    ``R(hK) = prod_j (1 - hK/rho_j)^{-1} (1 + hK/rho_j)`` which is unitary for
    any antisymmetric (or complex skew-hermitean) ``K``: the norm is preserved
    at every step size and only the phase accuracy depends on ``h``.
    """

    def __init__(self, k, stages: int = 6):
        mat = _generator_matrix(k)
        _check_antisymmetric(mat)
        self.mat = mat
        self.is_complex = np.iscomplexobj(mat.data if sp.issparse(mat) else mat)
        self.stages = stages
        self.roots = pade_roots(stages)
        self.radius = spectral_radius(mat)
        self._factors = {}

    def n_steps(self, t: float, tol: float) -> int:
        x = abs(t) * self.radius
        if x == 0:
            return 1
        c = pade_error_constant(self.stages)
        p = 2 * self.stages
        n = (c * x ** (p + 1) / tol) ** (1.0 / p)
        return max(1, int(math.ceil(n)))

    def _solvers(self, h: float):
        key = float(h)
        if key not in self._factors:
            n = self.mat.shape[0]
            out = []
            for rho in self.roots:
                x = self.mat * (h / rho)
                if sp.issparse(self.mat):
                    lhs = (sp.identity(n, dtype=complex, format="csc") - x.tocsc()).tocsc()
                    solve = spla.splu(lhs).solve
                else:
                    lu = sla.lu_factor(np.eye(n) - x)
                    solve = (lambda lu_: lambda b: sla.lu_solve(lu_, b))(lu)
                out.append((x, solve))
            self._factors = {key: out}
        return self._factors[key]

    def step(self, q: np.ndarray, h: float) -> np.ndarray:
        real = not (self.is_complex or np.iscomplexobj(q))
        v = np.asarray(q, dtype=complex)
        for x, solve in self._solvers(h):
            v = solve(v + x @ v)
        return v.real if real else v

    def evolve(self, q, t: float, tol: float = 1e-10) -> np.ndarray:
        n = self.n_steps(t, tol)
        h = t / n
        v = np.asarray(q).reshape(-1)
        for _ in range(n):
            v = self.step(v, h)
        return v


def evolve(q, k, t: float, method: str = "auto", tol: float = 1e-10):
    """``R(t) q`` for the rotation generated by ``k``.

    ``method`` is ``"exact"`` (eigendecomposition), ``"gauss"`` (Gauss-Legendre /
    diagonal Pade steps, sized from ``tol``) or ``"auto"``, which picks the exact
    path below dimension 512.  Returns the same type as ``q``.
    """
    wrapped = isinstance(q, ClassicalWaveFunction)
    basis = q.basis if wrapped else getattr(k, "basis", None)
    vec = q.q if wrapped else _vector(q)
    mat = _generator_matrix(k)
    if mat.shape != (vec.size, vec.size):
        raise ValueError(f"generator shape {mat.shape} does not match state of length {vec.size}")
    _check_antisymmetric(mat)
    if method == "auto":
        method = "exact" if vec.size < EXACT_DIM_LIMIT else "gauss"
    if method == "exact":
        out = _Propagator.build(mat).apply(vec, t)
    elif method == "gauss":
        out = GaussIntegrator(mat).evolve(vec, t, tol)
    else:
        raise ValueError(f"unknown method {method!r}")
    return ClassicalWaveFunction(out, basis) if wrapped else out


def trajectory(q0, k, times, method: str = "auto", tol: float = 1e-10) -> np.ndarray:
    """States at every entry of ``times`` (rows), starting from ``q0`` at ``times[0]``."""
    times = np.asarray(times, dtype=float)
    vec = _vector(getattr(q0, "q", q0))
    mat = _generator_matrix(k)
    _check_antisymmetric(mat)
    if method == "auto":
        method = "exact" if vec.size < EXACT_DIM_LIMIT else "gauss"
    out = np.empty((times.size, vec.size))
    if method == "exact":
        prop = _Propagator.build(mat)
        c = prop.v.conj().T @ vec
        for i, t in enumerate(times - times[0]):
            out[i] = (prop.v @ (np.exp(-1j * prop.w * t) * c)).real
        return out
    if method != "gauss":
        raise ValueError(f"unknown method {method!r}")
    integ = GaussIntegrator(mat)
    out[0] = vec
    for i in range(1, times.size):
        out[i] = integ.evolve(out[i - 1], times[i] - times[i - 1], tol)
    return out


# --- two-state model -----------------------------------------------------------------


@dataclass(frozen=True)
class TwoStateModel:
    """``K = omega (0, 1; -1, 0)``; ``p_0(t) = cos^2(omega t + alpha)``."""

    omega: float

    def generator(self) -> np.ndarray:
        return self.omega * np.array([[0.0, 1.0], [-1.0, 0.0]])

    @staticmethod
    def phase(q0) -> float:
        q0 = np.asarray(q0, dtype=float)
        return math.atan2(-q0[1], q0[0])

    def solution(self, q0, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        c, s = np.cos(self.omega * t), np.sin(self.omega * t)
        q0 = np.asarray(q0, dtype=float)
        return np.stack([c * q0[0] + s * q0[1], -s * q0[0] + c * q0[1]], axis=-1)

    def p0(self, q0, t) -> np.ndarray:
        return np.cos(self.omega * np.asarray(t, dtype=float) + self.phase(q0)) ** 2

    def flip_times(self, q0, t_end: float) -> np.ndarray:
        """Zeros of ``q_0``: ``omega t + alpha = pi/2 + n pi`` inside ``(0, t_end]``."""
        if self.omega == 0:
            return np.empty(0)
        a = self.phase(q0)
        w = abs(self.omega)
        sgn = math.copysign(1.0, self.omega)
        # zeros of cos(w' t + a') with w' > 0
        a = sgn * a
        n0 = math.ceil((a - math.pi / 2) / math.pi + 1e-15)
        ts = [(math.pi / 2 + n * math.pi - a) / w for n in range(n0 - 1, n0 + int(w * t_end / math.pi) + 3)]
        return np.array(sorted(t for t in ts if 0 < t <= t_end))


def second_order_check(p0_series, h: float, omega: float) -> float:
    """``max |D2 p_0 - 2 omega^2 (1 - 2 p_0)|`` with the centred second difference."""
    p = np.asarray(p0_series, dtype=float).reshape(-1)
    if p.size < 3:
        raise ValueError("second_order_check needs at least 3 samples")
    if h <= 0:
        raise ValueError("step h must be positive")
    d2 = (p[2:] - 2 * p[1:-1] + p[:-2]) / (h * h)
    rhs = 2 * omega ** 2 * (1 - 2 * p[1:-1])
    return float(np.max(np.abs(d2 - rhs)))


# --- sign tracking -------------------------------------------------------------------


@dataclass
class SignFlip:
    tau: int
    t_flip: float
    bucket: tuple[float, float]
    p_bucket_min: float
    p_at_flip: float | None = None

    def to_dict(self) -> dict:
        return {"tau": self.tau, "t_flip": self.t_flip, "bucket": list(self.bucket),
                "p_bucket_min": self.p_bucket_min, "p_at_flip": self.p_at_flip}


@dataclass
class SignReport:
    signs: np.ndarray
    flips: list[SignFlip] = field(default_factory=list)
    threshold: float = 1e-6

    @property
    def ok(self) -> bool:
        for f in self.flips:
            p = f.p_at_flip if f.p_at_flip is not None else f.p_bucket_min
            if not p < self.threshold:
                return False
        return True

    def to_json(self) -> str:
        return json.dumps({"threshold": self.threshold, "ok": self.ok, "n_flips": len(self.flips),
                           "flips": [f.to_dict() for f in self.flips]}, indent=2)


def _bisect_zero(fn, tau: int, lo: float, hi: float, q_lo: float, iters: int = 60) -> float:
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        v = fn(mid)[tau]
        if (v < 0) == (q_lo < 0):
            lo, q_lo = mid, v
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, abs(hi)):
            break
    return 0.5 * (lo + hi)


def track_signs(q_series, times, threshold: float = 1e-6, refine=None) -> SignReport:
    """Signs of every component over time and a report of each flip.

    A flip is a change of ``s_tau`` between consecutive samples.  The flip time is
    the linear-interpolation zero of ``q_tau`` inside the bucket; with ``refine``
    (a callable ``t -> q(t)``) it is located by bisection and ``p_tau`` is
    evaluated there.  ``ok`` holds when every flip has ``p`` below ``threshold``.
    """
    q = np.asarray(q_series, dtype=float)
    times = np.asarray(times, dtype=float)
    if q.ndim != 2 or q.shape[0] != times.size:
        raise ValueError("q_series must have one row per time sample")
    s = signs_of(q)
    report = SignReport(s, [], threshold)
    steps, taus = np.nonzero(s[1:] != s[:-1])
    for k, tau in sorted(zip(steps.tolist(), taus.tolist()), key=lambda x: (x[1], x[0])):
        t0, t1 = times[k], times[k + 1]
        a, b = q[k, tau], q[k + 1, tau]
        t_flip = t0 if a == b else t0 + (t1 - t0) * a / (a - b)
        p_min = float(min(a * a, b * b))
        p_at = None
        if refine is not None:
            t_flip = _bisect_zero(refine, tau, t0, t1, a)
            p_at = float(refine(t_flip)[tau] ** 2)
        report.flips.append(SignFlip(tau, float(t_flip), (float(t0), float(t1)), p_min, p_at))
    return report


# --- export --------------------------------------------------------------------------


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_trajectory_csv(path, times, q_series, dense: bool = False) -> None:
    """Long rows ``(t, tau, q, p, s)`` or, with ``dense``, one row per time."""
    q = np.asarray(q_series, dtype=float)
    times = np.asarray(times, dtype=float)
    s = signs_of(q)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        n = q.shape[1]
        if dense:
            w.writerow(["t"] + [f"q{i}" for i in range(n)] + [f"p{i}" for i in range(n)] + [f"s{i}" for i in range(n)])
            for t, row, sr in zip(times, q, s):
                w.writerow([_fmt(t)] + [_fmt(x) for x in row] + [_fmt(x * x) for x in row] + [int(v) for v in sr])
        else:
            w.writerow(["t", "tau", "q", "p", "s"])
            for t, row, sr in zip(times, q, s):
                for tau in range(n):
                    w.writerow([_fmt(t), tau, _fmt(row[tau]), _fmt(row[tau] ** 2), int(sr[tau])])
