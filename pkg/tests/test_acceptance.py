"""Acceptance criteria, one test per criterion, each at its stated tolerance and runtime budget.

Every criterion runs the matching verification suite at the ``small`` geometry
(random generators up to dimension 2000, 50 equivalence trials, full-size demos)
and records a ``PASS``/``FAIL`` line, printed in the pytest summary.  Running this
file directly prints the same lines without pytest.
"""
import time

import pytest

from isingq import verification

CRITERIA = [
    (1, "spinor-algebra identities, exact to 1e-15", "clifford", 1.0),
    (2, "Grassmann engine: anticommutators at B = 4, conjugate basis at B <= 6", "grassmann", 5.0),
    (3, "generator = Grassmann oracle projection at B <= 16, K antisymmetric, [N, K] = 0", "generator", 60.0),
    (4, "two-state model over 10 periods, sign flips only where p < 1e-6", "two-state", 1.0),
    (5, "orthogonal evolution up to dim 2000, R^T R = 1 for the two-step transfer", "orthogonal", 60.0),
    (6, "sector evolution = Dirac solver on 16 sites, two-rule expectations", "equivalence", 120.0),
    (7, "lattice dispersion and omega^2 - k_lat^2 = m^2", "dispersion", 30.0),
    (8, "interval spectrum in {0, 1}, position moments by both rules", "observables", 30.0),
    (9, "non-relativistic limit: L1 falls over M = 5..40, final < 1e-3", "nonrel", 300.0),
    (10, "double slit and tunneling demos", "demos", 600.0),
    (11, "two-particle antisymmetry after evolution", "antisymmetry", 30.0),
]


def evaluate(number, title, suite, budget):
    t0 = time.perf_counter()
    result = verification.run_suite(suite, "small", seed=0)
    elapsed = time.perf_counter() - t0
    failed = [c for c in result["checks"] if not c["passed"]]
    ok = not failed and elapsed < budget
    detail = f"{elapsed:.1f} s / {budget:g} s"
    if failed:
        detail += "; failing: " + "; ".join(
            f"{c['name']} = {c['value']} (needs {c['comparator']} {c['tolerance']})" for c in failed)
    elif elapsed >= budget:
        detail += "; over budget"
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {title} [{detail}]"
    return ok, line, failed, elapsed


@pytest.mark.slow
@pytest.mark.parametrize("number, title, suite, budget", CRITERIA, ids=[c[2] for c in CRITERIA])
def test_criterion(number, title, suite, budget, acceptance_log):
    ok, line, failed, elapsed = evaluate(number, title, suite, budget)
    acceptance_log.append(line)
    print(line)
    assert not failed, line
    assert elapsed < budget, line


if __name__ == "__main__":
    results = [evaluate(*c) for c in CRITERIA]
    for _, line, _, _ in results:
        print(line, flush=True)
    raise SystemExit(0 if all(r[0] for r in results) else 1)
