"""Orbit-space coefficient fields for the reduced processes.

Everything the reduced SDEs and the multiplicative functionals need at a
batch of orbit-space points ``y = (x, ft)``: drifts, the diffusion factor,
sigma with gradient and Hessian, the Laplacian of sigma, and the group-index
coefficients multiplying the representation generators.

Derivatives come from the model's closed form when it has one; otherwise
from central differences of :func:`geometry.make_frame`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .geometry import ModelSpec


@dataclass
class OrbitCoefficients:
    sigma: np.ndarray        # (N,)
    grad_sigma: np.ndarray   # (N, nR)
    hess_sigma: np.ndarray   # (N, nR, nR)
    Hinv: np.ndarray         # (N, nR, nR) orbit inverse metric
    X: np.ndarray            # (N, nR, nR) lower Cholesky factor of Hinv
    b_tilde: np.ndarray      # intrinsic (Laplace-Beltrami) drift
    b_full: np.ndarray       # b_tilde + Hinv . grad(sigma)/2
    lap_sigma: np.ndarray    # Laplace-Beltrami of sigma
    dsd: np.ndarray          # <d sigma, d sigma>
    dinv: np.ndarray         # (N, nG, nG)
    lin_dH: np.ndarray       # (N, nG) divergence coefficient with volume sqrt(det d H)
    lin_H: np.ndarray        # (N, nG) same with sqrt(H)
    noise: np.ndarray        # (N, nR, nG) connection coefficients per noise column
    potential: np.ndarray    # (N,)

    @property
    def jac_integrand(self):
        return self.lap_sigma + 0.25 * self.dsd


def sqrt_factor(S, check: bool = True):
    """Lower-triangular X with X X^T = S."""
    S = np.asarray(S, float)
    if check:
        asym = np.max(np.abs(S - np.swapaxes(S, -1, -2))) if S.size else 0.0
        if asym > 1e-10 * max(1.0, float(np.max(np.abs(S)))):
            raise geo.FactorizationError("matrix is not symmetric")
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise geo.FactorizationError("matrix is not positive definite") from None


# ---------------------------------------------------------------------------
# generic finite-difference engine


def _base_fields(model: ModelSpec, y):
    x, ft = geo.split(model, y)
    fr = geo.make_frame(model, x, ft, check=False)
    sqH = np.sqrt(fr.H)
    detd = np.exp(fr.sigma)
    return {
        "fr": fr,
        "sqH": sqH,
        "sqdH": np.sqrt(fr.H * detd),
        "Hinv": fr.orbit_inverse,
        "conn_h": fr.conn_gamma @ fr.h_inv,     # h^{km} A^nu_m -> [nu, k]
        "K_V": fr.K_V,
        "sigma": fr.sigma,
    }


def _generic(model: ModelSpec, y) -> OrbitCoefficients:
    y = np.asarray(y, float)
    nM, nR = model.n_M, model.n_R
    h = geo.FD_STEP * model.scale
    base = _base_fields(model, y)
    fr = base["fr"]
    div_LB = 0.0
    zeros = np.zeros(y.shape[:-1] + (model.n_G,))
    div_c = {"H": zeros, "dH": zeros}
    div_k = {"H": zeros, "dH": zeros}
    grad = np.empty(y.shape[:-1] + (nR,))
    for j in range(nR):
        e = np.zeros(nR)
        e[j] = h
        p = _base_fields(model, y + e)
        m = _base_fields(model, y - e)
        grad[..., j] = (p["sigma"] - m["sigma"]) / (2 * h)
        dF = (p["sqH"][..., None, None] * p["Hinv"] - m["sqH"][..., None, None] * m["Hinv"]) / (2 * h)
        div_LB = div_LB + dF[..., :, j]
        for key, vol in (("H", "sqH"), ("dH", "sqdH")):
            if j < nM:
                dC = (p[vol][..., None] * p["conn_h"][..., :, j]
                      - m[vol][..., None] * m["conn_h"][..., :, j]) / (2 * h)
                div_c[key] = div_c[key] + dC
            else:
                b = j - nM
                dK = (p[vol][..., None] * p["K_V"][..., b, :]
                      - m[vol][..., None] * m["K_V"][..., b, :]) / (2 * h)
                div_k[key] = div_k[key] + dK
    Hinv = base["Hinv"]
    b_t = div_LB / base["sqH"][..., None]
    b_f = b_t + 0.5 * np.einsum("nij,nj->ni", Hinv, grad)
    hess = geo.fd_hessian4(lambda z: geo.sigma_fn(model, z), y, geo.FD_STEP_2 * model.scale)
    lap = np.einsum("ni,ni->n", b_t, grad) + np.einsum("nij,nij->n", Hinv, hess)
    dsd = np.einsum("ni,nij,nj->n", grad, Hinv, grad)
    lin = {}
    for key, vol in (("H", "sqH"), ("dH", "sqdH")):
        dc = div_c[key] / base[vol][..., None]
        dk = div_k[key] / base[vol][..., None]
        lin[key] = dc + np.einsum("nvm,nm->nv", fr.GLL, dk)
    X = np.linalg.cholesky(Hinv)
    noise = _noise_coefficients(model, fr.conn_gamma, fr.conn_d_p, X)
    x, ft = geo.split(model, y)
    return OrbitCoefficients(
        sigma=base["sigma"], grad_sigma=grad, hess_sigma=hess, Hinv=Hinv, X=X,
        b_tilde=b_t, b_full=b_f, lap_sigma=lap, dsd=dsd, dinv=fr.dmat_inv,
        lin_dH=lin["dH"], lin_H=lin["H"], noise=noise,
        potential=model.reduced_potential(x, ft))


def _noise_coefficients(model, conn_gamma, conn_p, X):
    """Coefficient of J_nu multiplying each noise column.

    Section-noise columns m: A_(gamma)^nu_k X^k_m.  Vector-noise columns b:
    A~^nu_a X^a_b.  The overall -mu sqrt(kappa) is applied by the caller.
    """
    nM = model.n_M
    col_m = np.einsum("nvk,nkm->nmv", conn_gamma, X[..., :nM, :nM])
    col_b = np.einsum("nva,nab->nbv", conn_p, X[..., nM:, nM:])
    return np.concatenate([col_m, col_b], axis=-2)


# ---------------------------------------------------------------------------
# flat rotation model in closed form


def _so2(model: ModelSpec, y) -> OrbitCoefficients:
    # Entries are filled one component at a time: on (N, 3, 3) arrays this
    # is several times faster than broadcasting over the trailing axes.
    y = np.asarray(y, float)
    n = y.shape[:-1]
    x, f1, f2 = y[..., 0], y[..., 1], y[..., 2]
    d = x * x + f1 * f1 + f2 * f2
    inv_d = 1.0 / d
    inv_x = 1.0 / x
    k1, k2 = f2 * inv_x, -f1 * inv_x          # K_V / x with K_V = (f2, -f1)
    # orbit inverse metric diag(1, I + k k^T) and its Cholesky factor
    Hinv = np.zeros(n + (3, 3))
    Hinv[..., 0, 0] = 1.0
    Hinv[..., 1, 1] = 1.0 + k1 * k1
    Hinv[..., 2, 2] = 1.0 + k2 * k2
    Hinv[..., 1, 2] = Hinv[..., 2, 1] = k1 * k2
    l11 = np.sqrt(1.0 + k1 * k1)
    l21 = k1 * k2 / l11
    l22 = np.sqrt(1.0 + k2 * k2 / (l11 * l11))
    X = np.zeros(n + (3, 3))
    X[..., 0, 0] = 1.0
    X[..., 1, 1] = l11
    X[..., 2, 1] = l21
    X[..., 2, 2] = l22
    u = y * (2.0 * inv_d)[..., None]          # grad sigma
    hess = np.empty(n + (3, 3))
    for i in range(3):
        for j in range(i, 3):
            v = -u[..., i] * u[..., j]
            if i == j:
                v += 2.0 * inv_d
            hess[..., i, j] = v
            hess[..., j, i] = v
    b_t = np.empty(n + (3,))
    b_f = np.empty(n + (3,))
    b_f[..., 0] = inv_x
    b_t[..., 0] = inv_x - x * inv_d
    for c, fc in ((1, f1), (2, f2)):
        b_f[..., c] = -fc * inv_x * inv_x
        b_t[..., c] = b_f[..., c] - fc * inv_d
    noise = np.zeros(n + (3, 1))
    # A~_a X^a_b with A~ = K_V / d
    noise[..., 1, 0] = (f2 * l11 - f1 * l21) * inv_d
    noise[..., 2, 0] = -f1 * l22 * inv_d
    c = model.params.get("coupling", 0.0)
    return OrbitCoefficients(
        sigma=np.log(d), grad_sigma=u, hess_sigma=hess, Hinv=Hinv, X=X,
        b_tilde=b_t, b_full=b_f, lap_sigma=2.0 * inv_d, dsd=4.0 * inv_d,
        dinv=inv_d[..., None, None], lin_dH=np.zeros(n + (1,)),
        lin_H=np.zeros(n + (1,)), noise=noise, potential=c * d)


def orbit_coefficients(model: ModelSpec, y, analytic: bool = True) -> OrbitCoefficients:
    y = np.atleast_2d(np.asarray(y, float))
    if analytic and model.params.get("closure") is not None:
        return _so2(model, y)
    return _generic(model, y)


# ---------------------------------------------------------------------------
# total-space drift


def _sqrtdet_ginv(model, Q):
    G = model.metric_P(Q)
    return np.sqrt(np.linalg.det(G))[..., None, None] * np.linalg.inv(G)


def total_drift(model: ModelSpec, Q):
    """G^{-1/2} d_B (G^{1/2} G^{AB}) for the P-component (zero for flat P)."""
    Q = np.atleast_2d(np.asarray(Q, float))
    if model.params.get("flat_P", False):
        return np.zeros_like(Q)
    h = geo.FD_STEP * model.scale
    acc = 0.0
    for B in range(model.n_P):
        e = np.zeros(model.n_P)
        e[B] = h
        acc = acc + (_sqrtdet_ginv(model, Q + e)[..., :, B] - _sqrtdet_ginv(model, Q - e)[..., :, B]) / (2 * h)
    return acc / np.sqrt(np.linalg.det(model.metric_P(Q)))[..., None]
