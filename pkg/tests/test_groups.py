import numpy as np
import pytest

from wiener_reduction import groups as G
from wiener_reduction.models import so2_irrep, su2_irrep


def test_quaternion_exp_log_roundtrip():
    a = np.random.default_rng(0).uniform(-1, 1, (50, 3))
    assert np.allclose(G.qlog(G.qexp(a)), a, atol=1e-12)


def test_su2_frame_matches_finite_difference():
    rng = np.random.default_rng(1)
    a = rng.uniform(-0.8, 0.8, (10, 3))
    u = G.su2_frame(a)
    h = 1e-6
    for al in range(3):
        e = np.zeros(3)
        e[al] = h
        dq = (G.qexp(a + e) - G.qexp(a - e)) / (2 * h)
        right = G.qmul(dq, G.qconj(G.qexp(a)))      # pure quaternion
        assert np.allclose(right[:, 1:], u[:, :, al], atol=1e-8)


@pytest.mark.parametrize("lam", [1, 2, 3])
def test_circle_trapezoid_orthogonality(lam):
    th, w = G.circle_quadrature()
    assert abs(np.sum(w * so2_irrep(lam).D(th)[:, 0, 0])) < 1e-12


@pytest.mark.parametrize("j", [0.5, 1.0])
def test_su2_quadrature_schur(j):
    q, w = G.su2_quadrature()
    D = su2_irrep(j).D(q)
    assert np.abs(np.einsum("n,nij->ij", w, D)).max() < 1e-12
    second = np.einsum("n,nij->ij", w, np.abs(D) ** 2)
    assert np.allclose(second, 1.0 / D.shape[-1], atol=1e-12)


def test_su2_group_law():
    rng = np.random.default_rng(2)
    g, h = G.SU2.random(rng, 5), G.SU2.random(rng, 5)
    assert np.allclose(G.SU2.mul(g, G.SU2.inv(g)), G.SU2.identity, atol=1e-14)
    D = su2_irrep(0.5).D
    assert np.allclose(D(G.SU2.mul(g, h)), D(g) @ D(h), atol=1e-12)
