import numpy as np
import pytest

from wiener_reduction import geometry as geo
from wiener_reduction import holonomy as H
from wiener_reduction import models as M
from wiener_reduction.fields import orbit_coefficients


def point():
    m = M.builtin_so2_planar()
    x, ft = np.array([[1.0]]), np.array([[1.0, 0.0]])
    return m, geo.make_frame(m, x, ft), orbit_coefficients(m, geo.join(x, ft))


def test_worked_example_gamma4_and_mprime():
    m, fr, co = point()
    assert fr.dmat[0, 0, 0] == pytest.approx(2.0)
    assert fr.H[0] == pytest.approx(0.5)
    assert np.allclose(fr.conn_d_p[0, 0], [0.0, -0.5])
    ir = M.so2_irrep(1)
    db = 0.5 * co.grad_sigma[:, 1:]
    g4 = H.gamma4(fr, ir, db)[0, :, 0, 0]
    assert np.allclose(g4, [-0.25, -0.5j])
    assert H.mprime(co, M.so2_irrep(0))[0, 0, 0].real == pytest.approx(-0.0625)


@pytest.mark.parametrize("name,labels", [("so2-planar", [0, 1]), ("so2-stretched", [0, 1]),
                                         ("su2", ["0", "1/2", "1"])])
def test_mprime_closed_form_vs_assembly(name, labels):
    m = M.BUILTINS[name]()
    x, ft = M.sample_points(m, np.random.default_rng(0), 20)
    fr = geo.make_frame(m, x, ft)
    co = orbit_coefficients(m, geo.join(x, ft), analytic=False)
    for ir in M.irreps_for(m, labels):
        assert np.abs(H.mprime(co, ir) - H.mprime_assembled(m, fr, co, ir)).max() < 1e-8


def test_step_factor_scalar_and_euler():
    M_ = np.full((3, 1, 1), 0.2j)
    L = np.zeros((3, 2, 1, 1), complex)
    dw = np.zeros((3, 2))
    assert np.allclose(H.step_factor(M_, L, dw, 0.1), np.exp(0.02j))
    assert np.allclose(H.step_factor(M_, L, dw, 0.1, "euler"), 1 + 0.02j)


def test_unitary_step_for_antihermitian_generator():
    ir = M.su2_irrep(0.5)
    L = np.broadcast_to(ir.generators[None, None, 0], (4, 1, 2, 2))
    M_ = np.zeros((4, 2, 2), complex)
    dw = np.random.default_rng(0).normal(size=(4, 1))
    F = H.step_factor(M_, L, dw, 0.01)
    assert np.allclose(F @ np.conj(np.swapaxes(F, -1, -2)), np.eye(2), atol=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_accumulator_marks_nonfinite_paths():
    acc = H.MatrixAccumulator.identity(3, 1)
    M_ = np.array([0.0, np.inf, 0.0]).reshape(3, 1, 1).astype(complex)
    L = np.zeros((3, 1, 1, 1), complex)
    active = np.ones(3, bool)
    H.accumulate_step(acc, M_, L, np.zeros((3, 1)), 0.1, active=active)
    assert acc.aborted.tolist() == [False, True, False]
    assert active.tolist() == [True, False, True]
    with pytest.raises(H.AccumulatorOverflowError):
        H.accumulate_step(H.MatrixAccumulator.identity(3, 1), M_, L, np.zeros((3, 1)), 0.1)


def test_accumulator_renormalizes():
    acc = H.MatrixAccumulator.identity(1, 1)
    M_ = np.full((1, 1, 1), 300.0 + 0j)
    L = np.zeros((1, 1, 1, 1), complex)
    for _ in range(3):
        H.accumulate_step(acc, M_, L, np.zeros((1, 1)), 1.0)
    assert np.abs(acc.Z).max() <= 1.0 + 1e-12
    total = acc.log_scale[0] + np.log(np.abs(acc.Z[0, 0, 0]))
    assert total == pytest.approx(900.0)


def test_jacobian_boundary():
    assert H.jacobian_boundary(np.log(2.0), np.log(32.0)) == pytest.approx(np.log(2.0))


def test_time_ordering_left_multiplication():
    A = np.array([[0, 1], [0, 0]], complex)
    B = np.array([[0, 0], [1, 0]], complex)
    acc = H.MatrixAccumulator.identity(1, 2)
    zero = np.zeros((1, 2, 2), complex)
    for X in (A, B):
        H.accumulate_step(acc, zero, X[None, None], np.ones((1, 1)), 1.0, scheme="euler")
    I = np.eye(2)
    assert np.allclose(acc.Z[0], (I + B) @ (I + A))
    assert not np.allclose(acc.Z[0], (I + A) @ (I + B))


def test_scalar_product_is_exponential_of_integrals():
    rng = np.random.default_rng(0)
    acc = H.MatrixAccumulator.identity(5, 1)
    Mc = np.full((5, 1, 1), -0.3 + 0.2j)
    Lc = np.full((5, 2, 1, 1), 0.7j)
    total = np.zeros(5, complex)
    for _ in range(50):
        dw = rng.normal(scale=0.1, size=(5, 2))
        H.accumulate_step(acc, Mc, Lc, dw, 0.01)
        total += Mc[:, 0, 0] * 0.01 + 0.7j * dw.sum(1)
    assert np.allclose(acc.Z[:, 0, 0], np.exp(total), atol=1e-12)


def test_jacobian_against_finite_difference_laplacian():
    m, fr, co = point()
    assert co.dsd[0] == pytest.approx(2.0)
    y = np.array([[1.0, 1.0, 0.0]])
    h = 1e-4

    def flux(z):
        c = orbit_coefficients(m, z, analytic=False)
        x, ft = geo.split(m, z)
        sq = np.sqrt(geo.make_frame(m, x, ft).H)
        return sq[:, None] * np.einsum("nij,nj->ni", c.Hinv, c.grad_sigma), sq

    _, sq0 = flux(y)
    div = sum((flux(y + e)[0] - flux(y - e)[0])[0, i] / (2 * h)
              for i, e in enumerate(np.eye(3) * h))
    lap = div / sq0[0]
    expect = -0.125 * (lap + 0.25 * 2.0) * 1e-3
    assert H.jacobian_increment(co, 1.0, 1.0, 1e-3)[0] == pytest.approx(expect, abs=1e-8)


def test_constant_d_gives_zero_jacobian():
    m = M.cylinder()
    co = orbit_coefficients(m, np.array([[0.2, 0.4], [1.0, -0.5]]))
    assert np.allclose(H.jacobian_increment(co, 1.0, 1.0, 1e-3), 0.0, atol=1e-12)
    assert H.jacobian_boundary(co.sigma[0], co.sigma[1]) == pytest.approx(0.0, abs=1e-12)


def test_lambda_zero_terms_vanish():
    m, fr, co = point()
    M_, L = H.integrand(co, M.so2_irrep(0), 1.0, 1.0, "girsanov")
    assert np.all(M_ == 0) and np.all(L == 0)
