"""The two compact groups used by the built-in models.

Group elements are stored as float arrays with a trailing storage axis:
angles ``(..., 1)`` for the circle, unit quaternions ``(..., 4)`` for SU(2).
Group *coordinates* ``a`` are always ``(..., n_G)``; for the circle they are
the angle itself, for SU(2) exponential coordinates ``g = exp(a . e)`` with
``e = (i, j, k)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

# ---------------------------------------------------------------------------
# quaternions, stored as (w, x, y, z)


def qmul(p, q):
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    pw, px, py, pz = np.moveaxis(p, -1, 0)
    qw, qx, qy, qz = np.moveaxis(q, -1, 0)
    return np.stack([
        pw * qw - px * qx - py * qy - pz * qz,
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
    ], axis=-1)


def qconj(q):
    q = np.asarray(q, float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def qexp(a):
    """exp of the pure quaternion a . (i, j, k); a has shape (..., 3)."""
    a = np.asarray(a, float)
    th = np.linalg.norm(a, axis=-1)
    # sin(th)/th with a safe small-angle branch
    small = th < 1e-8
    s = np.where(small, 1.0 - th ** 2 / 6.0, np.sin(th) / np.where(small, 1.0, th))
    return np.concatenate([np.cos(th)[..., None], s[..., None] * a], axis=-1)


def qlog(q):
    """Inverse of :func:`qexp` on the branch |a| < pi."""
    q = np.asarray(q, float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    v = q[..., 1:]
    nv = np.linalg.norm(v, axis=-1)
    th = np.arctan2(nv, q[..., 0])
    small = nv < 1e-12
    fac = np.where(small, 1.0, th / np.where(small, 1.0, nv))
    return fac[..., None] * v


def left_matrix(q):
    """4x4 real matrix of v -> q v."""
    q = np.asarray(q, float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    rows = [
        [w, -x, -y, -z],
        [x, w, -z, y],
        [y, z, w, -x],
        [z, -y, x, w],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


IMAG_UNITS = np.eye(4)[1:]          # i, j, k as quaternions
LEVI_CIVITA = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    LEVI_CIVITA[_i, _j, _k] = 1.0
    LEVI_CIVITA[_j, _i, _k] = -1.0


def cross_matrix(v):
    """Skew matrix [v]_x with [v]_x w = v x w."""
    v = np.asarray(v, float)
    return -np.einsum("ijk,...k->...ij", LEVI_CIVITA, v)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupSpec:
    name: str
    dim: int
    elem_size: int
    identity: np.ndarray
    mul: Callable
    inv: Callable
    exp: Callable             # coordinates -> element
    log: Callable             # element -> coordinates
    frame: Callable           # coordinates -> u-bar (n_G x n_G), u[nu, alpha]
    random: Callable          # (rng, n) -> elements
    quadrature: Callable      # (n_nodes) -> (elements, weights), weights sum to 1
    volume: float


def _circle_frame(a):
    a = np.asarray(a, float)
    return np.ones(a.shape[:-1] + (1, 1))


def circle_quadrature(n: int = 64):
    th = 2.0 * np.pi * np.arange(n) / n
    return th[:, None], np.full(n, 1.0 / n)


CIRCLE = GroupSpec(
    name="U(1)",
    dim=1,
    elem_size=1,
    identity=np.zeros(1),
    mul=lambda g, h: np.asarray(g, float) + np.asarray(h, float),
    inv=lambda g: -np.asarray(g, float),
    exp=lambda a: np.asarray(a, float),
    log=lambda g: np.asarray(g, float),
    frame=_circle_frame,
    random=lambda rng, n: rng.uniform(0.0, 2.0 * np.pi, size=(n, 1)),
    quadrature=circle_quadrature,
    volume=2.0 * np.pi,
)


def su2_frame(a):
    """Right-trivialised derivative of exp in exponential coordinates.

    Returns u with (d g / d a^alpha) g^{-1} = u[nu, alpha] e_nu, i.e.
    (exp(ad_X) - 1) / ad_X with ad_X = 2 [a]_x for the basis (i, j, k).
    """
    a = np.asarray(a, float)
    A = 2.0 * cross_matrix(a)
    th = 2.0 * np.linalg.norm(a, axis=-1)[..., None, None]
    small = th < 1e-5
    ths = np.where(small, 1.0, th)
    c1 = np.where(small, 0.5 - th ** 2 / 24.0, (1.0 - np.cos(ths)) / ths ** 2)
    c2 = np.where(small, 1.0 / 6.0 - th ** 2 / 120.0, (ths - np.sin(ths)) / ths ** 3)
    eye = np.broadcast_to(np.eye(3), A.shape)
    return eye + c1 * A + c2 * (A @ A)


def _su2_random(rng, n):
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def su2_quadrature(n_per_axis: int = 8):
    """Product rule on S^3 in Euler angles g = e^{k a/2} e^{j b/2} e^{k c/2}.

    Trapezoid in the two periodic angles, Gauss-Legendre in cos(beta).  With
    8 nodes per axis (1024 nodes) Wigner functions up to spin 3 integrate
    exactly.
    """
    m = n_per_axis
    alpha = 2.0 * np.pi * np.arange(m) / m
    gamma = 4.0 * np.pi * np.arange(2 * m) / (2 * m)
    xg, wg = np.polynomial.legendre.leggauss(m)
    beta = np.arccos(xg)
    A, B, C = np.meshgrid(alpha, beta, gamma, indexing="ij")
    W = np.broadcast_to(wg[None, :, None], A.shape)
    half = 0.5
    k = np.array([0.0, 0.0, 1.0])   # exponential-coordinate directions
    j = np.array([0.0, 1.0, 0.0])
    qa = qexp(half * A[..., None] * k)
    qb = qexp(half * B[..., None] * j)
    qc = qexp(half * C[..., None] * k)
    q = qmul(qmul(qa, qb), qc).reshape(-1, 4)
    w = W.reshape(-1)
    return q, w / w.sum()


SU2 = GroupSpec(
    name="SU(2)",
    dim=3,
    elem_size=4,
    identity=np.array([1.0, 0.0, 0.0, 0.0]),
    mul=qmul,
    inv=qconj,
    exp=qexp,
    log=qlog,
    frame=su2_frame,
    random=_su2_random,
    quadrature=su2_quadrature,
    volume=2.0 * np.pi ** 2,
)
