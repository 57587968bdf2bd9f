import numpy as np
import pytest

from wiener_reduction import greens as G
from wiener_reduction import models as M
from wiener_reduction.sde import RunParams

Y0 = (1.5, 0.5, 0.0)
PHI = G.TestFunction(center=(1.6, 0.4, 0.1), width=0.5)


def test_test_function_derivatives():
    f = G.TestFunction(center=(1.0, 0.2, -0.1), width=0.7, tilt=(0.3, -0.2, 0.5))
    y = np.array([[1.2, 0.0, 0.3]])
    h = 1e-5
    E = np.eye(3) * h
    g = np.array([(f(y + e) - f(y - e))[0] / (2 * h) for e in E])
    assert np.allclose(f.grad(y)[0], g, atol=1e-8)
    Hs = np.array([(f.grad(y + e) - f.grad(y - e))[0] / (2 * h) for e in E])
    assert np.allclose(f.hess(y)[0], Hs, atol=1e-7)


@pytest.mark.parametrize("lam", [0, 1, 2])
def test_bessel_oracle_matches_trapezoid(lam):
    a = G.so2_free_oracle(PHI, lam, Y0, 0.25)
    b = G.so2_free_oracle_trapezoid(PHI, lam, Y0, 0.25)
    assert abs(a - b) < 1e-10


@pytest.mark.parametrize("lam", [0, 1])
def test_oracle_against_exact_gaussian_sampling(lam):
    # the free endpoint is exactly Gaussian; map it to (x, ft, angle) directly
    s2, n = 0.25, 400_000
    rng = np.random.default_rng(11)
    Q = np.array([Y0[0], 0.0]) + np.sqrt(s2) * rng.standard_normal((n, 2))
    f = np.array(Y0[1:]) + np.sqrt(s2) * rng.standard_normal((n, 2))
    a = np.arctan2(Q[:, 1], Q[:, 0])
    c, s = np.cos(a), np.sin(a)
    ft = np.stack([c * f[:, 0] - s * f[:, 1], s * f[:, 0] + c * f[:, 1]], -1)
    vals = np.exp(1j * lam * a) * PHI(np.column_stack([np.hypot(Q[:, 0], Q[:, 1]), ft]))
    se = np.sqrt((vals.real.var() + vals.imag.var()) / n)
    assert abs(vals.mean() - G.so2_free_oracle(PHI, lam, Y0, s2)) < 4 * se


@pytest.mark.parametrize("name,label", [("so2-planar", 1), ("su2", "1/2")])
def test_haar_projection_reproduces_equivariant_lift(name, label):
    m = M.BUILTINS[name]()
    ir = M.irreps_for(m, [label])[0]
    rng = np.random.default_rng(0)
    x, ft = M.sample_points(m, rng, 6)
    g = m.group.random(rng, 6)
    if name == "su2":
        g = m.group.exp(0.7 * m.group.log(g))
    from wiener_reduction import geometry as geo
    Q, f = geo.from_adapted(m, x, ft, g)
    phi = G.TestFunction(center=tuple(np.r_[x[0], ft[0]]), width=0.8)

    def lift(Q, f):
        return phi.lift(m, ir, Q, f)

    assert np.allclose(G.haar_projection(m, ir, lift, Q, f), lift(Q, f), atol=1e-9)


def test_compare_verdicts():
    a = G.GreenEstimate(np.array([[1.0 + 0j]]), np.array([[0.01]]), 100, 100, 0.0)
    b = G.GreenEstimate(np.array([[1.02 + 0j]]), np.array([[0.01]]), 100, 100, 0.0)
    assert G.compare(a, b)["verdict"] == "pass"
    c = G.GreenEstimate(np.array([[1.2 + 0j]]), np.array([[0.01]]), 100, 100, 0.0)
    assert G.compare(a, c)["verdict"] == "fail"
    d = G.GreenEstimate(np.array([[1.0 + 0j]]), np.array([[0.5]]), 100, 100, 0.0)
    assert G.compare(a, d)["verdict"] == "inconclusive"
    e = G.GreenEstimate(np.array([[1.0 + 0j]]), np.array([[0.01]]), 97, 100, 0.03)
    assert e.flagged and G.compare(a, e)["verdict"] == "fail"


def test_summarize_complex_stderr():
    s = np.array([1 + 1j, 1 - 1j, 3 + 1j, 3 - 1j])
    est = G.summarize(s, np.ones(4, bool))
    assert est.value[0, 0] == pytest.approx(2.0)
    assert est.stderr[0, 0] == pytest.approx(np.sqrt((4 / 3 + 4 / 3) / 4))


def test_zero_time_returns_test_function():
    m = M.builtin_so2_planar()
    p = RunParams(t_b=0.0, n_paths=10)
    est = G.feynman_kac_reduced(m, PHI, M.so2_irrep(1), Y0, p, "girsanov")
    assert est.value[0, 0] == pytest.approx(PHI(np.array([Y0]))[0])


@pytest.mark.parametrize("name,labels,y",
                         [("so2-planar", [0, 1], Y0), ("so2-stretched", [1], Y0),
                          ("su2", ["0", "1/2", "1"], (1.5, 0.3, 0.2, 0.5, 0.1)),
                          ("cylinder", [1], (0.3, 0.5))])
@pytest.mark.parametrize("mode", ["original", "girsanov"])
def test_generator_check(name, labels, y, mode):
    m = M.BUILTINS[name]()
    p = RunParams(n_paths=1)
    for ir in M.irreps_for(m, labels):
        for phi in G.scalar_suite(np.asarray(y) + 0.1, 0.5):
            r = G.generator_fd_check(m, ir, phi, y, p, mode)
            assert r["pass"], r


def test_girsanov_consistency_small():
    m = M.builtin_so2_planar(0.1)
    r = G.girsanov_consistency(m, PHI, M.so2_irrep(1), Y0, RunParams(n_paths=8000))
    assert r["verdict"] == "pass"


def test_relation_high_lambda_short_time():
    m = M.builtin_so2_planar()
    r = G.relation_check(m, PHI, M.so2_irrep(5), Y0, RunParams(t_b=0.04, n_paths=20000))
    assert r["verdict"] == "pass" and r["max_abs_z"] < 3


def test_relation_constant_d_model():
    c = M.cylinder()
    phi = G.TestFunction(center=(0.3, 0.5), width=0.5)
    r = G.relation_check(c, phi, M.so2_irrep(0), (0.3, 0.5), RunParams(t_b=0.05, n_paths=3000))
    assert r["verdict"] == "pass"


def test_relation_nonabelian_small():
    m = M.builtin_su2()
    y = (1.5, 0.3, 0.2, 0.5, 0.1)
    phi = G.TestFunction(center=y, width=0.6)
    r = G.relation_check(m, phi, M.su2_irrep(0.5), y, RunParams(t_b=0.04, dt=2e-3, n_paths=1500))
    assert r["verdict"] == "pass"


def test_relation_degenerate_interval():
    with pytest.raises(ValueError, match="degenerate"):
        G.relation_check(M.builtin_so2_planar(), PHI, M.so2_irrep(1), Y0, RunParams(t_b=0.0))


def test_euler_factor_is_not_generator_consistent():
    # the plain Euler factor misses the Ito correction of the noise term:
    # its one-step error does not shrink with dt, the exponential factor's does
    m = M.builtin_so2_planar()
    p = RunParams(n_paths=1)
    ex = G.generator_fd_check(m, M.so2_irrep(2), PHI, Y0, p, "girsanov")
    eu = G.generator_fd_check(m, M.so2_irrep(2), PHI, Y0, p, "girsanov", scheme="euler")
    assert ex["pass"] and not eu["pass"]
    assert eu["richardson_relative_error"] > 100 * ex["richardson_relative_error"]
