"""Acceptance criteria, one test each.  Every test prints a single
``CRITERION n: PASS|FAIL ...`` line (also repeated in the pytest summary)."""
from __future__ import annotations

import time

import numpy as np
import pytest

from wiener_reduction import checks, greens
from wiener_reduction import models as M
from wiener_reduction.models import trivial_irrep
from wiener_reduction.sde import RunParams, simulate_reduced_block

SUMMARY: list[str] = []

START = (1.5, 0.5, 0.0)
PHI = greens.TestFunction(center=(1.6, 0.4, 0.1), width=0.5)
SU2_START = (1.5, 0.3, 0.2, 0.5, 0.1)
BUDGET = RunParams(mu=1.0, kappa=1.0, m=1.0, t_a=0.0, t_b=0.25, dt=1e-3, n_paths=200_000)

_cache: dict = {}


def report(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
    SUMMARY.append(line)
    print(line)
    return ok


def _irreps(model):
    return M.irreps_for(model, [0, 1] if model.group.dim == 1 else ["0", "1/2"])


def test_criterion_1_adapted_metric_identities():
    t0 = time.time()
    worst_inv = worst_det = 0.0
    for name in M.BUILTINS:
        (inv, r_inv, _), (det, r_det, _) = checks.metric_identities(M.BUILTINS[name](), n=200)
        worst_inv, worst_det = max(worst_inv, r_inv), max(worst_det, r_det)
    dt = time.time() - t0
    ok = worst_inv < 1e-9 and worst_det < 1e-8 and dt < 10
    assert report(1, ok, f"inverse {worst_inv:.2e} det {worst_det:.2e} ({dt:.1f}s)")


def test_criterion_2_algebraic_identities():
    t0 = time.time()
    r1 = r2 = 0.0
    for name in M.BUILTINS:
        (_, a, _), (_, b, _) = checks.algebraic_identities(M.BUILTINS[name](), n=200)
        r1, r2 = max(r1, a), max(r2, b)
    dt = time.time() - t0
    ok = r1 < 1e-10 and r2 < 1e-9 and dt < 5
    assert report(2, ok, f"d-gamma identity {r1:.2e} GLL identity {r2:.2e} ({dt:.1f}s)")


def test_criterion_3_mprime_cross_assembly():
    t0 = time.time()
    worst = 0.0
    for name in ("so2-planar", "su2", "so2-stretched"):
        m = M.BUILTINS[name]()
        for _, r, _ in checks.mprime_identity(m, _irreps(m), n=50):
            worst = max(worst, r)
    dt = time.time() - t0
    ok = worst < 1e-8 and dt < 30
    assert report(3, ok, f"max |M' closed - assembled| {worst:.2e} ({dt:.1f}s)")


def _girsanov_runs():
    if "girsanov" not in _cache:
        t0 = time.time()
        runs = {}
        for c in (0.0, 0.1):
            m = M.builtin_so2_planar(c)
            for lam in (0, 1):
                runs[(c, lam)] = greens.girsanov_consistency(m, PHI, M.so2_irrep(lam), START,
                                                             BUDGET, workers=1)
        _cache["girsanov"] = (runs, time.time() - t0)
    return _cache["girsanov"]


def _girsanov_ok(r):
    return (r["max_abs_z"] < 3 and r["relative_stderr"] <= 0.02
            and r["exit_fraction"] < 0.01 and r["verdict"] == "pass")


def _determinism():
    m = M.builtin_so2_planar(0.1)
    p = BUDGET.with_(n_paths=20_000, t_b=0.05)
    outs = [greens.run_reduced(m, M.so2_irrep(1), PHI, START, p, "girsanov", "girsanov", 17,
                               workers=w, keep_weights=True)[1]["samples"] for w in (1, 2, 3)]
    return all(np.array_equal(outs[0], o) for o in outs[1:])


def test_criterion_4_girsanov_equality():
    runs, dt = _girsanov_runs()
    same = _determinism()
    ok = all(_girsanov_ok(r) for r in runs.values()) and dt < 300 and same
    worst_z = max(r["max_abs_z"] for r in runs.values())
    worst_se = max(r["relative_stderr"] for r in runs.values())
    worst_exit = max(r["exit_fraction"] for r in runs.values())
    assert report(4, ok, f"max|z| {worst_z:.2f} rel.se {worst_se:.4f} exit {worst_exit:.4f} "
                         f"bit-identical across workers {same} ({dt:.0f}s)")


def _relation_runs():
    if "relation" not in _cache:
        t0 = time.time()
        m = M.builtin_so2_planar()
        runs = {lam: greens.relation_check(m, PHI, M.so2_irrep(lam), START, BUDGET)
                for lam in (0, 1)}
        _cache["relation"] = (runs, time.time() - t0)
    return _cache["relation"]


def _relation_ok(r):
    o = r["oracle"]
    return (r["verdict"] == "pass" and r["max_abs_z"] < 3 and o["z_rhs"] < 3
            and o["z_lhs"] < 3)


def test_criterion_5_reduction_relation():
    runs, dt = _relation_runs()
    ok = all(_relation_ok(r) for r in runs.values()) and dt < 600
    parts = " ".join(f"lambda={k}: z={r['max_abs_z']:.2f} oracle z_rhs={r['oracle']['z_rhs']:.2f}"
                     f" z_lhs={r['oracle']['z_lhs']:.2f}" for k, r in runs.items())
    assert report(5, ok, f"{parts} ({dt:.0f}s)")


def test_criterion_6_weak_order():
    t0 = time.time()
    ratios = []
    cases = [("so2-planar", START), ("so2-stretched", START), ("su2", SU2_START),
             ("cylinder", (0.3, 0.5))]
    for name, y in cases:
        m = M.BUILTINS[name]()
        for ir in [trivial_irrep(m.n_G)] + _irreps(m):
            for phi in greens.scalar_suite(np.asarray(y) + 0.1, 0.5):
                for mode in ("original", "girsanov"):
                    r = greens.generator_fd_check(m, ir, phi, y, RunParams(n_paths=1), mode,
                                                  (1e-3, 5e-4))
                    ratios.append(r["error_ratio"])
    dt = time.time() - t0
    ok = all(1.6 <= q <= 2.4 for q in ratios) and dt < 300
    assert report(6, ok, f"{len(ratios)} checks, ratio range [{min(ratios):.3f}, "
                         f"{max(ratios):.3f}] ({dt:.0f}s)")


def test_criterion_7_pathwise_ito_identity():
    t0 = time.time()
    m = M.builtin_so2_planar()
    a = checks.ito_identity(m, BUDGET.with_(dt=1e-3), START, n_paths=10_000)
    b = checks.ito_identity(m, BUDGET.with_(dt=5e-4), START, n_paths=10_000)
    ratio = b["milstein"] / a["milstein"]
    plain = b["plain"] / a["plain"]
    dt = time.time() - t0
    ok = ratio <= 0.6 and dt < 120
    assert report(7, ok, f"mean|log diff| ratio {ratio:.3f} (uncorrected Ito sum {plain:.3f}) "
                         f"({dt:.0f}s)")


def test_criterion_8_zero_momentum():
    m = M.builtin_so2_planar(0.1)
    ir0 = M.so2_irrep(0)
    p = BUDGET.with_(n_paths=2000)
    a = simulate_reduced_block(m, ir0, p, START, "girsanov", 3, 0, 2000)
    b = simulate_reduced_block(m, trivial_irrep(1), p, START, "girsanov", 3, 0, 2000)
    exact = bool(np.all(a.Z == 1.0))
    same = bool(np.array_equal(a.end, b.end) and np.array_equal(a.log_jacobian, b.log_jacobian))
    g_runs, _ = _girsanov_runs()
    r_runs, _ = _relation_runs()
    sector = (all(_girsanov_ok(r) for (c, lam), r in g_runs.items() if lam == 0)
              and _relation_ok(r_runs[0]))
    ok = exact and same and sector
    assert report(8, ok, f"Z==I exactly {exact}, matches scalar pipeline {same}, "
                         f"criteria 4-5 at lambda=0 {sector}")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-s"]))
