"""Invariant and acceptance suites shared by the CLI and the test-suite."""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import dirac, ensemble
from . import grassmann as gr
from . import lattice as lat
from . import sectors as sec

GEOMETRIES = ("tiny", "small")


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool
    comparator: str = "<"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["value"] = None if self.value is None or not math.isfinite(self.value) else float(self.value)
        return d


def below(name, value, tol) -> Check:
    value = float(value)
    return Check(name, value, tol, bool(value < tol), "<")


def above(name, value, bound) -> Check:
    value = float(value)
    return Check(name, value, bound, bool(value > bound), ">")


def exact(name, value) -> Check:
    value = float(value)
    return Check(name, value, 0.0, value == 0.0, "==")


def holds(name, flag: bool) -> Check:
    return Check(name, 1.0 if flag else 0.0, 1.0, bool(flag), "==")


def _rng(seed):
    return np.random.default_rng(seed)


def _unit(rng, n):
    v = rng.normal(size=n)
    return v / np.linalg.norm(v)


# --- suites --------------------------------------------------------------------------


def suite_clifford(geometry="tiny", seed=0) -> list[Check]:
    alg = lat.build_spinor_algebra()
    out = []
    for k in range(3):
        out.append(below(f"T{k + 1} symmetric", np.abs(alg.T[k] - alg.T[k].T).max(), 1e-15))
    out.append(below("I~ antisymmetric", np.abs(alg.I_tilde + alg.I_tilde.T).max(), 1e-15))
    out.append(below("I~ squares to -1", np.abs(alg.I_tilde @ alg.I_tilde + np.eye(4)).max(), 1e-15))
    for mu, nu in itertools.combinations_with_replacement(range(4), 2):
        g = alg.gamma
        ac = g[mu] @ g[nu] + g[nu] @ g[mu]
        out.append(below(f"{{gamma{mu}, gamma{nu}}} = 2 eta", np.abs(ac - 2 * alg.eta[mu, nu] * np.eye(4)).max(), 1e-15))
    u = alg.U
    diag = u.conj().T @ (alg.gamma[0] @ alg.gamma_bar) @ u
    out.append(below("U diagonalises gamma0 gamma_bar", np.abs(diag - np.diag([1, 1, -1, -1])).max(), 1e-12))
    return out


def suite_grassmann(geometry="tiny", seed=0) -> list[Check]:
    out = []
    n = 4
    worst_ac = worst_aa = worst_cc = 0.0
    for m in range(1 << n):
        g = gr.basis_element(m, n)
        for i in range(n):
            for j in range(n):
                ac = gr.derive(gr.multiply_variable(g, j), i) + gr.multiply_variable(gr.derive(g, i), j)
                if i == j:
                    ac = ac - g
                worst_ac = max(worst_ac, ac.max_abs())
                aa = gr.multiply_variable(gr.multiply_variable(g, j), i) + gr.multiply_variable(gr.multiply_variable(g, i), j)
                cc = gr.derive(gr.derive(g, j), i) + gr.derive(gr.derive(g, i), j)
                worst_aa = max(worst_aa, aa.max_abs())
                worst_cc = max(worst_cc, cc.max_abs())
    out.append(exact("{a^dag_i, a_j} = delta_ij (B = 4, exhaustive)", worst_ac))
    out.append(exact("{a_i, a_j} = 0 (B = 4)", worst_aa))
    out.append(exact("{a^dag_i, a^dag_j} = 0 (B = 4)", worst_cc))
    for n in range(1, 7):
        worst = 0.0
        for t in range(1 << n):
            sigma, s = gr.conjugate_basis(t, n)
            conj = gr.GrassmannElement({sigma: float(s)}, n)
            for r in range(1 << n):
                v = gr.berezin_integrate(gr.multiply(conj, gr.basis_element(r, n)))
                worst = max(worst, abs(v - (1.0 if r == t else 0.0)))
        out.append(exact(f"conjugate basis orthonormal (B = {n})", worst))
    return out


def _generator_cases(geometry):
    rng = _rng(7)
    cases = [
        ("line3 Ns4", lat.ModelParams(Ns=4), lat.LatticeGeometry.line(3)),
        ("line4 Ns4", lat.ModelParams(Ns=4), lat.LatticeGeometry.line(4)),
        ("pair Ns8 m e A0", lat.ModelParams(Ns=8, m=0.8, e=0.6, A0=rng.normal(size=2), Ak=(0.0, 0.0, rng.normal(size=2))),
         lat.LatticeGeometry.line(2)),
    ]
    if geometry == "small":
        cases.append(("single site Ns8 m e", lat.ModelParams(Ns=8, m=1.1, e=0.4, A0=0.3), lat.LatticeGeometry((1, 1, 1))))
    return cases


def suite_generator(geometry="tiny", seed=0) -> list[Check]:
    out = []
    rng = _rng(seed)
    for name, params, geo in _generator_cases(geometry):
        b = geo.n_vars(params.Ns)
        op = lat.build_generator_grassmann(params, geo)
        a = lat.one_particle_operator(params, geo)
        if geometry == "small" or b <= 12:
            ms = range(b + 1)
        else:
            ms = sorted({1, 2, b // 2, b - 1})
        worst = worst_anti = 0.0
        for m in ms:
            basis = sec.sector_basis(b, m)
            k = sec.second_quantize(a, basis)
            oracle = op.matrix(basis.masks(), strict=True)
            worst = max(worst, float(np.abs(k.toarray() - oracle).max(initial=0.0)))
            worst_anti = max(worst_anti, ensemble.antisymmetry_defect(k))
        out.append(below(f"{name}: sector = oracle projection (B = {b}, m in {list(ms)})", worst, 1e-14))
        out.append(below(f"{name}: K antisymmetric", worst_anti, 1e-13))
        number = gr.number_operator(b)
        worst_nk = 0.0
        for _ in range(3):
            terms = {int(mk): float(rng.normal()) for mk in rng.integers(0, 1 << b, size=40)}
            g = gr.GrassmannElement(terms, b)
            worst_nk = max(worst_nk, gr.commutator(number, op, g).max_abs())
        out.append(below(f"{name}: [N, K] = 0 on random elements", worst_nk, 1e-12))
        k_empty = op(gr.full_product(b)).max_abs()
        k_full = op(gr.one(b)).max_abs()
        out.append(exact(f"{name}: empty and full vacua static", max(k_empty, k_full)))
    return out


def suite_two_state(geometry="tiny", seed=0) -> list[Check]:
    omega, alpha = 1.3, 0.4
    model = ensemble.TwoStateModel(omega)
    q0 = np.array([math.cos(alpha), -math.sin(alpha)])
    t_end = 10 * 2 * math.pi / omega
    times = np.linspace(0.0, t_end, 20001)
    traj = ensemble.trajectory(q0, model.generator(), times)
    err = float(np.abs(traj[:, 0] ** 2 - model.p0(q0, times)).max())
    report = ensemble.track_signs(traj, times, 1e-6, refine=lambda t: ensemble.evolve(q0, model.generator(), t))
    flips = np.array([f.t_flip for f in report.flips if f.tau == 0])
    expected = model.flip_times(q0, t_end)
    timing = float(np.abs(flips - expected).max()) if flips.size == expected.size else float("inf")
    residuals = []
    for h in (4e-3, 2e-3):
        t = np.arange(0, 5, h)
        residuals.append(ensemble.second_order_check(model.p0(q0, t), h, omega))
    order = math.log2(residuals[0] / residuals[1])
    return [
        below("p0(t) vs cos^2(omega t + alpha), 10 periods", err, 1e-10),
        holds("sign flips only where p < 1e-6", report.ok),
        below("flip times match omega t + alpha = pi/2 + n pi", timing, 1e-9),
        above("second-order law: observed order", order, 1.9),
        below("norm drift", float(np.abs(np.sum(traj ** 2, axis=1) - 1).max()), 1e-9),
    ]


def suite_orthogonal(geometry="tiny", seed=0) -> list[Check]:
    rng = _rng(seed)
    out = []
    dims = (200,) if geometry == "tiny" else (500, 2000)
    for n in dims:
        a = rng.normal(size=(n, n)) / math.sqrt(n)
        k = a - a.T
        q = _unit(rng, n)
        v = ensemble.evolve(q, k, 10.0, method="gauss")
        out.append(below(f"norm drift, random K dim {n}, t = 10", abs(np.linalg.norm(v) - 1), 1e-9))
    a = rng.normal(size=(16, 16))
    k = a - a.T
    q = _unit(rng, 16)
    ex = ensemble.evolve(q, k, 1.0, "exact")
    out.append(below("exact vs Gauss integrator, dim 16", np.abs(ex - ensemble.evolve(q, k, 1.0, "gauss")).max(), 1e-8))
    out.append(below("time reversal", np.abs(ensemble.evolve(ex, k, -1.0) - q).max(), 1e-8))
    sizes = (4,) if geometry == "tiny" else (4, 8)
    for L in sizes:
        for eps in (0.5, 1.0):
            geo = lat.LatticeGeometry.cubic(L, delta=1.0, eps=eps)
            r = lat.two_step_transfer(geo)
            d = (r.T @ r - sp.identity(r.shape[0])).toarray()
            out.append(below(f"R^T R = 1, two-step transfer L = {L}, eps = {eps}", np.abs(d).max(), 1e-12))
    for shape in ((1, 1, 3), (1, 2, 1), (2, 1, 1)):
        geo = lat.LatticeGeometry(shape, 0.5)
        o1, o2 = lat.grassmann_transfer_oracle(geo)
        w1 = lat.build_one_particle_transfer(geo).toarray()
        dev = max(np.abs(o1 - w1).max(), np.abs(o2 @ o1 - lat.two_step_transfer(geo).toarray()).max())
        out.append(below(f"transfer map = Berezin oracle, shape {shape}", dev, 1e-12))
    return out


def _crosscheck_setup(seed):
    rng = _rng(seed)
    grid = lat.LatticeGeometry.line(16)
    spec = dirac.HamiltonianSpec(m=0.7, e=0.5, A0=0.4 * np.sin(2 * np.pi * np.arange(16) / 16))
    return rng, grid, spec


def _random_field(rng, grid):
    phi = rng.normal(size=(grid.n_sites, 4)) + 1j * rng.normal(size=(grid.n_sites, 4))
    return dirac.DiracField(phi / np.linalg.norm(phi), grid)


def suite_equivalence(geometry="tiny", seed=0) -> list[Check]:
    rng, grid, spec = _crosscheck_setup(seed)
    trials = 10 if geometry == "tiny" else 50
    worst = worst_density = 0.0
    for _ in range(trials):
        res = dirac.crosscheck_sector(_random_field(rng, grid), spec, 1.0)
        worst = max(worst, res["max_deviation"])
        worst_density = max(worst_density, res["density_deviation"])
    out = [below(f"sector vs Dirac solver, 16 sites, m e A0, {trials} trials", worst, 1e-8),
           below("density: quantum rule vs classical <N(x)>", worst_density, 1e-12)]
    out.append(below("two-rule expectation agreement (all observables)", _two_rule_defect(rng), 1e-12))
    return out


def _two_rule_defect(rng) -> float:
    geo = lat.LatticeGeometry.line(4)
    b = 16
    worst = 0.0
    for m in (1, 2, 3):
        basis = sec.sector_basis(b, m)
        q = _unit(rng, basis.dim)
        obs = [sec.total_number(basis), sec.position_observable(basis, geo.positions(), 2),
               sec.occupation_observable(basis, [0, 5, 9])]
        obs += [sec.local_number(basis, s, 4) for s in range(4)]
        obs += [sec.interval_observable(basis, r, 4) for r in ([0], [1, 2], [0, 3])]
        for o in obs:
            c, qv = sec.expect(o, q)
            worst = max(worst, abs(c - qv))
    return worst


def suite_dispersion(geometry="tiny", seed=0) -> list[Check]:
    out = []
    geos = [lat.LatticeGeometry.line(8)]
    if geometry == "small":
        geos.append(lat.LatticeGeometry((3, 4, 4)))
    for geo in geos:
        for m in (0.0, 1.0):
            params = lat.ModelParams(Ns=8, m=m)
            gen = lat.build_generator_sector(params, geo, 1)
            ev = np.sort(np.linalg.eigvalsh(1j * gen.matrix.toarray()))
            w = lattice_w = dirac.lattice_dispersion(geo, m)
            expect = np.sort(np.concatenate([np.repeat(w, 4), -np.repeat(w, 4)]))
            out.append(below(f"m = 1 sector spectrum = +-omega(k), shape {geo.shape}, mass {m}",
                             np.abs(ev - expect).max(), 1e-10))
            if m:
                s2 = lattice_w ** 2 - m * m
                worst = 0.0
                spec = dirac.HamiltonianSpec(m=m)
                for idx in itertools.islice(itertools.product(*[range(n) for n in geo.shape]), 8):
                    pw, _ = dirac.plane_wave(geo, idx, spec)
                    om = dirac.measured_frequency(pw, spec, 0.37)
                    flat = geo.site_index(idx)
                    worst = max(worst, abs(om ** 2 - s2[flat] - m * m))
                out.append(below(f"plane waves: omega^2 - k_lat^2 = m^2, shape {geo.shape}", worst, 1e-8))
    spec = dirac.HamiltonianSpec(m=1.3)
    pw, _ = dirac.plane_wave(geos[0], (0, 0, 0), spec)
    out.append(below("rest energy omega = m", abs(dirac.measured_frequency(pw, spec, 0.5) - 1.3), 1e-12))
    return out


def suite_observables(geometry="tiny", seed=0) -> list[Check]:
    rng = _rng(seed)
    out = []
    geo = lat.LatticeGeometry.line(4)
    n_sites, b = 4, 16
    one = sec.sector_basis(b, 1)
    spectra = set()
    for r in range(1, n_sites + 1):
        for region in itertools.combinations(range(n_sites), r):
            spectra |= set(sec.interval_observable(one, region, n_sites).spectrum.tolist())
    out.append(holds("interval spectrum in {0, 1} (one particle, every region, B = 16)", spectra <= {0.0, 1.0}))
    worst_int = True
    for m in (2, 3):
        basis = sec.sector_basis(b, m)
        for region in ([0], [1, 3], [0, 1, 2]):
            v = sec.interval_observable(basis, region, n_sites).values
            worst_int &= bool(np.all(v == np.round(v)) and v.min() >= 0 and v.max() <= 4 * len(region))
    out.append(holds("interval values are integers in [0, 4|R|] (m = 2, 3)", worst_int))
    q = _unit(rng, b)
    state, basis = sec.one_particle_state(q, sec.empty_vacuum(b))
    cl = sec.position_moments(state, basis, geo.positions())
    qu = sec.quantum_position_moments(q.reshape(n_sites, 4), geo.positions())
    dev = max(np.abs(cl["mean"] - qu["mean"]).max(), abs(cl["dispersion"] - qu["dispersion"]))
    out.append(below("position moments: classical vs quantum rule", dev, 1e-12))
    params = lat.ModelParams(Ns=4)
    a = lat.one_particle_operator(params, geo).toarray()
    for m in (1, 2):
        basis = sec.sector_basis(b, m)
        k = sec.second_quantize(a, basis)
        qs = _unit(rng, basis.dim)
        n_flow = sec.expectation_flow(sec.total_number(basis), qs, k)
        out.append(below(f"d<N>/dt = 0 (m = {m})", abs(n_flow), 1e-13))
        worst = 0.0
        for site in range(n_sites):
            obs = sec.local_number(basis, site, n_sites)
            worst = max(worst, abs(sec.expectation_flow(obs, qs, k) - sec.local_number_flow(qs, basis, a, site, n_sites)))
        out.append(below(f"local continuity law (m = {m})", worst, 1e-12))
        obs = sec.local_number(basis, 1, n_sites)
        slopes = []
        for h in (1e-2, 5e-3):
            up = ensemble.evolve(qs, k, h)
            dn = ensemble.evolve(qs, k, -h)
            slopes.append(abs((sec.expect(obs, up)[0] - sec.expect(obs, dn)[0]) / (2 * h) - sec.expectation_flow(obs, qs, k)))
        out.append(above(f"commutator vs finite difference: observed order (m = {m})", math.log2(slopes[0] / slopes[1]), 1.8))
    return out


def suite_nonrel(geometry="tiny", seed=0) -> list[Check]:
    rows = dirac.nonrel_sweep([5, 10, 20, 40])
    l1 = [r["l1"] for r in rows]
    out = [holds("Dirac vs Schroedinger L1 decreases over M = 5..40", all(b < a for a, b in zip(l1, l1[1:]))),
           below("final L1 distance (M = 40)", l1[-1], 1e-3),
           below("norm drift", max(r["norm_drift"] for r in rows), 1e-9)]
    grid = lat.LatticeGeometry.line(16)
    spec = dirac.HamiltonianSpec(m=2.0, basis="diagonal")
    phi = dirac.DiracField(np.tile([1.0, 0, 0, 0], (16, 1)) / 4.0, grid, "diagonal")
    t = 3.7
    psi0 = dirac.nonrel_reduce(phi, spec, 0.0).field.psi
    psit = dirac.nonrel_reduce(dirac.dirac_evolve(phi, spec, t), spec, t).field.psi
    out.append(below("rest-frame spinor: reduced psi constant in time", np.abs(psit - psi0).max(), 1e-12))
    return out


def demo_configs(geometry):
    if geometry == "tiny":
        return ({"shape": (256, 384), "spacing": 0.125, "dt": 0.005},
                {"n": 8192, "dt": 0.02})
    return {}, {}


def suite_demos(geometry="tiny", seed=0) -> list[Check]:
    ds_cfg, tn_cfg = demo_configs(geometry)
    two = dirac.demo_double_slit(ds_cfg, keep_frames=False).metrics
    one = dirac.demo_double_slit({**ds_cfg, "slit_centers": (1.5,)}, keep_frames=False).metrics
    tun = dirac.demo_tunneling(tn_cfg, keep_frames=False).metrics
    free = dirac.demo_tunneling({**tn_cfg, "energy_ratio": 0.0}, keep_frames=False).metrics
    return [
        above("double slit: central fringe contrast", two["contrast"], 0.5),
        holds("double slit: several fringes resolved", two["n_maxima"] >= 3),
        holds("single slit: single-lobed envelope", one["n_maxima"] == 1),
        below("double slit: density symmetric about the axis", two["density_asymmetry"], 1e-10),
        below("tunneling: relative error vs analytic T", tun["relative_error"], 0.15),
        below("tunneling: |T - 1| without barrier", abs(free["T"] - 1.0), 1e-6),
        below("norm drift (both demos)", max(two["norm_drift"], one["norm_drift"], tun["norm_drift"], free["norm_drift"]), 1e-9),
    ]


def suite_antisymmetry(geometry="tiny", seed=0) -> list[Check]:
    rng = _rng(seed)
    cases = [(lat.ModelParams(Ns=4), lat.LatticeGeometry.line(4)),
             (lat.ModelParams(Ns=8, m=0.9, e=0.5, A0=(0.2, -0.3)), lat.LatticeGeometry.line(2))]
    out = []
    for params, geo in cases:
        b = geo.n_vars(params.Ns)
        a = lat.one_particle_operator(params, geo)
        vac = sec.empty_vacuum(b)
        qmat = rng.normal(size=(b, b))
        state, basis = sec.two_particle_state(qmat, vac)
        k = sec.second_quantize(a, basis)
        moved = ensemble.evolve(state, k, 1.3)
        amp = sec.two_particle_amplitudes(moved, vac)
        out.append(below(f"two-particle antisymmetry after evolution, B = {b}", np.abs(amp + amp.T).max(), 1e-12))
        qa = 0.5 * (qmat - qmat.T)
        qa /= np.linalg.norm(qa)
        prop = sla.expm(a.toarray() * 1.3)
        out.append(below(f"two-particle amplitudes evolve as E Q E^T, B = {b}",
                         np.abs(amp - prop @ qa @ prop.T).max(), 1e-12))
        out.append(below(f"two-particle norm after evolution, B = {b}", abs(np.linalg.norm(moved) - 1), 1e-12))
    try:
        sec.two_particle_state(np.ones((4, 4)), n_vars=4)
        excluded = False
    except sec.PauliExcluded:
        excluded = True
    out.append(holds("symmetric amplitudes are Pauli-excluded", excluded))
    basis = sec.sector_basis(6, 1)
    twice, mid = sec.apply_creation(np.eye(basis.dim)[0], basis, 3)
    twice, _ = sec.apply_creation(twice, mid, 3)
    out.append(exact("a^dag_i a^dag_i = 0", np.abs(twice).max()))
    return out


SUITES = {
    "clifford": suite_clifford,
    "grassmann": suite_grassmann,
    "generator": suite_generator,
    "two-state": suite_two_state,
    "orthogonal": suite_orthogonal,
    "equivalence": suite_equivalence,
    "dispersion": suite_dispersion,
    "observables": suite_observables,
    "nonrel": suite_nonrel,
    "demos": suite_demos,
    "antisymmetry": suite_antisymmetry,
}


def run_suite(name: str, geometry: str = "tiny", seed: int = 0) -> dict:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {', '.join(SUITES)} or 'all'")
    if geometry not in GEOMETRIES:
        raise KeyError(f"unknown geometry {geometry!r}; choose tiny or small")
    t0 = time.perf_counter()
    checks = SUITES[name](geometry, seed)
    return {"suite": name, "geometry": geometry, "passed": all(c.passed for c in checks),
            "runtime_s": time.perf_counter() - t0, "checks": [c.to_dict() for c in checks]}


def run(names, geometry: str = "tiny", seed: int = 0) -> dict:
    names = list(SUITES) if names in (None, "all") else ([names] if isinstance(names, str) else list(names))
    for n in names:
        if n not in SUITES:
            raise KeyError(f"unknown suite {n!r}; choose from {', '.join(SUITES)} or 'all'")
    results = [run_suite(n, geometry, seed) for n in names]
    return {"geometry": geometry, "seed": seed, "passed": all(r["passed"] for r in results), "suites": results}
