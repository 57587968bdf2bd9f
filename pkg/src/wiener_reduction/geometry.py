"""Adapted-coordinate geometry of a product manifold with a group action.

All routines are batched: section coordinates ``x`` have shape ``(N, n_M)``,
reduced vector coordinates ``ft`` have shape ``(N, n_V)`` and every returned
array carries the same leading batch axis.  Index conventions for the stored
matrices:

* ``K_P[n, A, alpha]``, ``K_V[n, b, alpha]``  Killing vectors
* ``conn_gamma[n, mu, i]``, ``conn_d_i[n, mu, i]``, ``conn_d_p[n, mu, p]``
* ``Lam[n, beta, E]``, ``N[n, b, B]``
* ``u[n, nu, alpha]`` (the group frame), ``v = u^{-1}``
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .groups import GroupSpec


class GeometryError(Exception):
    """Base class for geometric failures."""


class DomainError(GeometryError):
    pass


class DegenerateOrbitError(GeometryError):
    pass


class GaugeSingularityError(GeometryError):
    pass


class AdaptationError(GeometryError):
    pass


class FactorizationError(GeometryError):
    pass


class ConsistencyError(GeometryError):
    pass


COND_WARN = 1e12
GAUGE_TOL = 1e-8
FD_STEP = 1e-5          # first derivatives, times model scale
FD_STEP_2 = 1e-3        # 4th-order stencils for second derivatives


@dataclass(frozen=True)
class ModelSpec:
    """Full definition of a model: manifolds, metrics, action, gauge, potential.

    Callables take batched arrays.  ``rep(g)`` is D(g); the action on V used by
    the adapted coordinates is ``rep_bar(g) = rep(g^{-1})``.
    """

    name: str
    n_P: int
    n_V: int
    n_M: int
    group: GroupSpec
    metric_P: Callable            # Q (N,nP) -> (N,nP,nP)
    metric_V: np.ndarray          # (nV,nV)
    action: Callable              # (Q, g) -> Q'
    rep: Callable                 # g -> (N,nV,nV)
    rep_generators: np.ndarray    # Jbar (nG,nV,nV)
    structure_constants: np.ndarray  # c[gamma, alpha, beta]
    killing_P: Callable           # Q -> (N,nP,nG)
    gauge: Callable               # Q -> (N,nG)
    gauge_grad: Callable          # Q -> (N,nG,nP)
    section: Callable             # x -> (N,nP)
    section_jac: Callable         # x -> (N,nP,nM)
    section_inverse: Callable     # Q* -> x
    potential: Callable           # (Q, f) -> (N,)
    x_domain: Callable            # x -> bool (N,)
    q_domain: Callable            # Q -> bool (N,)
    sample_x: Callable            # (rng, n) -> (n,nM)
    solve_gauge: Optional[Callable] = None   # Q -> g with chi(F(Q, g^-1)) = 0
    scale: float = 1.0
    params: dict = field(default_factory=dict)

    @property
    def n_G(self) -> int:
        return self.group.dim

    @property
    def n_R(self) -> int:
        return self.n_M + self.n_V

    def rep_bar(self, g):
        return self.rep(self.group.inv(g))

    def reduced_potential(self, x, ft):
        return self.potential(self.section(x), ft)


@dataclass(frozen=True)
class GeometryFrame:
    x: np.ndarray
    ft: np.ndarray
    Qs: np.ndarray
    Qs_i: np.ndarray
    G_P: np.ndarray
    G_P_inv: np.ndarray
    G_V: np.ndarray
    G_V_inv: np.ndarray
    K_P: np.ndarray
    K_V: np.ndarray
    gamma: np.ndarray
    gamma_inv: np.ndarray
    gamma_prime: np.ndarray
    dmat: np.ndarray
    dmat_inv: np.ndarray
    conn_gamma: np.ndarray
    conn_d_i: np.ndarray
    conn_d_p: np.ndarray
    Phi: np.ndarray
    Lam: np.ndarray
    N: np.ndarray
    h: np.ndarray
    h_inv: np.ndarray
    h_tilde: np.ndarray
    GLL: np.ndarray               # G^{EC} Lam^nu_E Lam^mu_C
    ht_ij: np.ndarray             # orbit inverse metric quadrant, blocks
    ht_ib: np.ndarray
    ht_ab: np.ndarray
    H: np.ndarray
    sigma: np.ndarray

    @property
    def orbit_inverse(self) -> np.ndarray:
        """Upper-left quadrant of the inverse adapted metric, (N, n_R, n_R)."""
        top = np.concatenate([self.ht_ij, self.ht_ib], axis=-1)
        bot = np.concatenate([np.swapaxes(self.ht_ib, -1, -2), self.ht_ab], axis=-1)
        return np.concatenate([top, bot], axis=-2)


# ---------------------------------------------------------------------------
# helpers


def _t(a):
    return np.swapaxes(a, -1, -2)


def _sym(a):
    return 0.5 * (a + _t(a))


def _inv(a, what: str, check: bool):
    if check:
        c = np.linalg.cond(a)
        if not np.all(np.isfinite(c)) or np.any(c > 1e15):
            raise DegenerateOrbitError(f"{what} is singular (condition {np.max(c):.3g})")
    return np.linalg.inv(a)


def as_batch(x, n):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, n) if x.size != n else x[None, :]
    return x


# ---------------------------------------------------------------------------
# individual operations


def killing_fields(model: ModelSpec, x, ft, check: bool = True):
    x = as_batch(x, model.n_M)
    ft = as_batch(ft, model.n_V)
    if check and not np.all(model.x_domain(x)):
        raise DomainError("section coordinates outside the chart domain")
    Qs = model.section(x)
    K_P = model.killing_P(Qs)
    K_V = np.einsum("abc,nc->nba", model.rep_generators, ft)
    return K_P, K_V


def orbit_metrics(model: ModelSpec, K_P, K_V, G_P, check: bool = True):
    G_V = model.metric_V
    gamma = _sym(_t(K_P) @ G_P @ K_P)
    gamma_p = _sym(_t(K_V) @ G_V @ K_V)
    d = gamma + gamma_p
    d_inv = _sym(_inv(d, "orbit metric d", check))
    return gamma, gamma_p, d, d_inv


def mechanical_connection(K_P, K_V, G_P, G_V, Qs_i, d_inv):
    conn_i = d_inv @ _t(K_P) @ G_P @ Qs_i
    conn_p = d_inv @ _t(K_V) @ G_V
    return conn_i, conn_p


def gamma_connection(K_P, G_P, Qs_i, gamma_inv):
    return gamma_inv @ _t(K_P) @ G_P @ Qs_i


def fp_lambda(model: ModelSpec, Qs, K_P, K_V, check: bool = True):
    chi_E = model.gauge_grad(Qs)
    Phi = chi_E @ K_P
    if check:
        det = np.abs(np.linalg.det(Phi))
        if np.any(det < GAUGE_TOL * model.scale ** model.n_G):
            raise GaugeSingularityError(
                f"Faddeev-Popov determinant {np.min(det):.3g} below threshold")
    Lam = np.linalg.solve(Phi, chi_E)
    N = -K_V @ Lam
    return Phi, Lam, N


def horizontal_metrics(G_P, K_P, Qs_i, gamma_inv, d_inv, check: bool = True):
    GK = G_P @ K_P
    GH = G_P - GK @ gamma_inv @ _t(GK)
    GHt = G_P - GK @ d_inv @ _t(GK)
    h = _sym(_t(Qs_i) @ GH @ Qs_i)
    ht = _sym(_t(Qs_i) @ GHt @ Qs_i)
    h_inv = _sym(_inv(h, "horizontal metric h", check))
    return h, h_inv, ht


def make_frame(model: ModelSpec, x, ft, check: bool = True) -> GeometryFrame:
    """Evaluate every adapted-coordinate object at the points (x, ft)."""
    x = as_batch(x, model.n_M)
    ft = as_batch(ft, model.n_V)
    if check and not np.all(model.x_domain(x)):
        raise DomainError("section coordinates outside the chart domain")
    Qs = model.section(x)
    Qs_i = model.section_jac(x)
    G_P = model.metric_P(Qs)
    G_V = np.broadcast_to(model.metric_V, (x.shape[0],) + model.metric_V.shape)
    G_P_inv = _sym(np.linalg.inv(G_P))
    G_V_inv = _sym(np.linalg.inv(G_V))
    K_P, K_V = killing_fields(model, x, ft, check=False)
    gamma, gamma_p, d, d_inv = orbit_metrics(model, K_P, K_V, G_P, check)
    gamma_inv = _sym(_inv(gamma, "orbit metric gamma", check))
    conn_i, conn_p = mechanical_connection(K_P, K_V, G_P, G_V, Qs_i, d_inv)
    conn_g = gamma_connection(K_P, G_P, Qs_i, gamma_inv)
    Phi, Lam, N = fp_lambda(model, Qs, K_P, K_V, check)
    h, h_inv, ht = horizontal_metrics(G_P, K_P, Qs_i, gamma_inv, d_inv, check)
    GLL = _sym(Lam @ G_P_inv @ _t(Lam))
    ht_ij = h_inv
    ht_ib = h_inv @ _t(conn_g) @ _t(K_V)          # h^{mi} A_m^mu K^b_mu
    ht_ab = _sym(N @ G_P_inv @ _t(N) + G_V_inv)
    H = orbit_determinant(G_P, G_V, K_P, K_V, Qs_i, d_inv, ht)
    sigma = np.linalg.slogdet(d)[1]
    if check and np.any(H <= 0):
        raise DegenerateOrbitError("orbit-space determinant H is not positive")
    return GeometryFrame(
        x=x, ft=ft, Qs=Qs, Qs_i=Qs_i, G_P=G_P, G_P_inv=G_P_inv, G_V=G_V,
        G_V_inv=G_V_inv, K_P=K_P, K_V=K_V, gamma=gamma, gamma_inv=gamma_inv,
        gamma_prime=gamma_p, dmat=d, dmat_inv=d_inv, conn_gamma=conn_g,
        conn_d_i=conn_i, conn_d_p=conn_p, Phi=Phi, Lam=Lam, N=N, h=h,
        h_inv=h_inv, h_tilde=ht, GLL=GLL, ht_ij=ht_ij, ht_ib=ht_ib,
        ht_ab=ht_ab, H=H, sigma=sigma)


def orbit_metric(G_P, G_V, K_P, K_V, Qs_i, d_inv, ht):
    """Metric on the orbit space in (x, ft) coordinates, (N, n_R, n_R)."""
    GHt_Ab = -G_P @ K_P @ d_inv @ _t(K_V) @ G_V        # (N, nP, nV)
    GHt_ab = G_V - G_V @ K_V @ d_inv @ _t(K_V) @ G_V
    off = _t(Qs_i) @ GHt_Ab                            # (N, nM, nV)
    top = np.concatenate([ht, off], axis=-1)
    bot = np.concatenate([_t(off), GHt_ab], axis=-1)
    return _sym(np.concatenate([top, bot], axis=-2))


def orbit_determinant(G_P, G_V, K_P, K_V, Qs_i, d_inv, ht):
    return np.linalg.det(orbit_metric(G_P, G_V, K_P, K_V, Qs_i, d_inv, ht))


def assemble_adapted_metric(model: ModelSpec, fr: GeometryFrame, a):
    """Block metric in adapted coordinates (x, ft, a)."""
    a = as_batch(a, model.n_G)
    u = model.group.frame(a)
    d = fr.dmat
    nM, nV, nG = model.n_M, model.n_V, model.n_G
    Ai, Ap = fr.conn_d_i, fr.conn_d_p
    n = fr.x.shape[0]
    G = np.zeros((n, nM + nV + nG, nM + nV + nG))
    sx, sf, sa = slice(0, nM), slice(nM, nM + nV), slice(nM + nV, None)
    G[:, sx, sx] = fr.h_tilde + _t(Ai) @ d @ Ai
    G[:, sf, sf] = fr.G_V
    G[:, sx, sa] = _t(Ai) @ d @ u
    G[:, sf, sa] = _t(Ap) @ d @ u
    G[:, sa, sx] = _t(G[:, sx, sa])
    G[:, sa, sf] = _t(G[:, sf, sa])
    G[:, sa, sa] = _t(u) @ d @ u
    return G


def assemble_inverse_metric(model: ModelSpec, fr: GeometryFrame, a):
    a = as_batch(a, model.n_G)
    u = model.group.frame(a)
    v = np.linalg.inv(u)
    nM, nV, nG = model.n_M, model.n_V, model.n_G
    n = fr.x.shape[0]
    Gi = np.zeros((n, nM + nV + nG, nM + nV + nG))
    sx, sf, sa = slice(0, nM), slice(nM, nM + nV), slice(nM + nV, None)
    Ag = fr.conn_gamma
    Gi[:, sx, sx] = fr.ht_ij
    Gi[:, sx, sf] = fr.ht_ib
    Gi[:, sf, sx] = _t(fr.ht_ib)
    Gi[:, sf, sf] = fr.ht_ab
    # -h^{nj} A^beta_n vbar^alpha_beta, rows j, columns alpha
    Gi[:, sx, sa] = -fr.h_inv @ _t(Ag) @ _t(v)
    # -GLL^{beta mu} K^b_mu vbar^alpha_beta, rows b, columns alpha
    Gi[:, sf, sa] = -fr.K_V @ fr.GLL @ _t(v)
    Gi[:, sa, sx] = _t(Gi[:, sx, sa])
    Gi[:, sa, sf] = _t(Gi[:, sf, sa])
    Gi[:, sa, sa] = v @ fr.GLL @ _t(v)
    return Gi


def determinant_factorization(model: ModelSpec, fr: GeometryFrame, a, check: bool = True):
    """Return (det_full, det_d, det_u_sq, H) and verify the factorization."""
    a = as_batch(a, model.n_G)
    G = assemble_adapted_metric(model, fr, a)
    det_full = np.linalg.det(G)
    det_d = np.linalg.det(fr.dmat)
    det_u_sq = np.linalg.det(model.group.frame(a)) ** 2
    rhs = det_d * det_u_sq * fr.H
    rel = np.abs(det_full - rhs) / np.abs(det_full)
    if check and np.any(rel > 1e-8):
        raise ConsistencyError(f"determinant factorization mismatch {np.max(rel):.3g}")
    return det_full, det_d, det_u_sq, fr.H


# ---------------------------------------------------------------------------
# sigma = ln det d and its derivatives


def sigma_fn(model: ModelSpec, y):
    """sigma at orbit-space points y = (x, ft) without building a full frame."""
    x, ft = split(model, y)
    K_P, K_V = killing_fields(model, x, ft, check=False)
    G_P = model.metric_P(model.section(x))
    d = _t(K_P) @ G_P @ K_P + _t(K_V) @ model.metric_V @ K_V
    return np.linalg.slogdet(d)[1]


def split(model: ModelSpec, y):
    y = np.asarray(y, float)
    return y[..., :model.n_M], y[..., model.n_M:]


def join(x, ft):
    return np.concatenate([np.asarray(x, float), np.asarray(ft, float)], axis=-1)


def fd_gradient(fun, y, h):
    """Second-order central differences of a batched scalar/array field.

    ``fun(y)`` maps (N, n) to (N, ...); result has shape (N, ..., n).
    """
    y = np.asarray(y, float)
    n = y.shape[-1]
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        cols.append((fun(y + e) - fun(y - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def fd_gradient4(fun, y, h):
    y = np.asarray(y, float)
    n = y.shape[-1]
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        cols.append((-fun(y + 2 * e) + 8 * fun(y + e) - 8 * fun(y - e) + fun(y - 2 * e))
                    / (12 * h))
    return np.stack(cols, axis=-1)


def fd_hessian4(fun, y, h):
    """Fourth-order stencil Hessian of a batched scalar field, (N, n, n)."""
    y = np.asarray(y, float)
    n = y.shape[-1]
    f0 = fun(y)
    out = np.empty(y.shape[:-1] + (n, n))
    E = np.eye(n) * h
    for i in range(n):
        ei = E[i]
        out[..., i, i] = (-fun(y + 2 * ei) + 16 * fun(y + ei) - 30 * f0
                          + 16 * fun(y - ei) - fun(y - 2 * ei)) / (12 * h * h)
        for j in range(i):
            ej = E[j]

            def g(s, t):
                return fun(y + s * ei + t * ej)
            # fourth-order mixed stencil (product of 1D 4th-order first derivatives)
            c = {1: 8.0, 2: -1.0}
            acc = 0.0
            for s in (1, 2):
                for t in (1, 2):
                    w = c[s] * c[t]
                    acc = acc + w * (g(s, t) - g(s, -t) - g(-s, t) + g(-s, -t))
            out[..., i, j] = out[..., j, i] = acc / (144 * h * h)
    return out


def sigma_derivatives(model: ModelSpec, x, ft, analytic: bool = True):
    """(sigma, sigma_n, sigma_b, d_n, d_b)."""
    x = as_batch(x, model.n_M)
    ft = as_batch(ft, model.n_V)
    if not np.all(model.x_domain(x)):
        raise DomainError("section coordinates outside the chart domain")
    y = join(x, ft)
    closure = model.params.get("closure") if analytic else None
    if closure is not None:
        s, g = closure.sigma_grad(y)
    else:
        h = FD_STEP * model.scale
        if np.any(~model.x_domain(x - h)):
            raise DomainError("finite-difference stencil leaves the chart domain")
        s = sigma_fn(model, y)
        g = fd_gradient(lambda z: sigma_fn(model, z), y, h)
    sn, sb = g[..., :model.n_M], g[..., model.n_M:]
    return s, sn, sb, 0.5 * sn, 0.5 * sb


# ---------------------------------------------------------------------------
# coordinate changes


def from_adapted(model: ModelSpec, x, ft, g):
    """(x, ft, g) -> (Q, f) with Q = F(Q*(x), g), f = Dbar(g) ft.  ``g`` is a
    group element in storage form."""
    x = as_batch(x, model.n_M)
    ft = as_batch(ft, model.n_V)
    g = as_batch(g, model.group.elem_size)
    Q = model.action(model.section(x), g)
    f = np.einsum("nab,nb->na", model.rep_bar(g), ft)
    return Q, f


def _gauge_residual(model, Q, a):
    g = model.group.exp(a)
    return model.gauge(model.action(Q, model.group.inv(g)))


def _newton_gauge(model, Q, a0, max_iter=50, tol=1e-13):
    a = np.array(a0, float)
    nG = model.n_G
    for _ in range(max_iter):
        r = _gauge_residual(model, Q, a)
        nr = np.linalg.norm(r, axis=-1)
        if np.all(nr < tol * model.scale):
            return a, True
        h = 1e-7
        Jc = [(_gauge_residual(model, Q, a + h * e) - _gauge_residual(model, Q, a - h * e))
              / (2 * h) for e in np.eye(nG)]
        J = np.stack(Jc, axis=-1)
        try:
            step = np.linalg.solve(J, r[..., None])[..., 0]
        except np.linalg.LinAlgError:
            return a, False
        lam = 1.0
        for _ in range(20):
            trial = a - lam * step
            if np.all(np.linalg.norm(_gauge_residual(model, Q, trial), axis=-1) <= nr):
                break
            lam *= 0.5
        a = trial
    r = _gauge_residual(model, Q, a)
    return a, bool(np.all(np.linalg.norm(r, axis=-1) < 1e-10 * model.scale))


def to_adapted(model: ModelSpec, Q, f):
    """(Q, f) -> (x, ft, g).  Raises AdaptationError when no gauge root exists."""
    Q = as_batch(Q, model.n_P)
    f = as_batch(f, model.n_V)
    if not np.all(model.q_domain(Q)):
        raise AdaptationError("point is outside the chart domain (fixed point of the action?)")
    if model.solve_gauge is not None:
        g = model.solve_gauge(Q)
    else:
        g = np.empty((Q.shape[0], model.group.elem_size))
        nodes, _ = model.group.quadrature()
        for n in range(Q.shape[0]):
            a, ok = _newton_gauge(model, Q[n:n + 1], np.zeros((1, model.n_G)))
            if not ok:
                # coarse scan over quadrature nodes, then refine the best one
                res = np.linalg.norm(model.gauge(model.action(
                    np.repeat(Q[n:n + 1], len(nodes), 0), model.group.inv(nodes))), axis=-1)
                a0 = model.group.log(nodes[np.argmin(res)])[None]
                a, ok = _newton_gauge(model, Q[n:n + 1], a0)
                if not ok:
                    raise AdaptationError("gauge equation root finder did not converge")
            g[n] = model.group.exp(a)[0]
    Qs = model.action(Q, model.group.inv(g))
    if np.any(np.linalg.norm(model.gauge(Qs), axis=-1) > 1e-9 * model.scale):
        raise AdaptationError("gauge condition not satisfied after adaptation")
    x = model.section_inverse(Qs)
    ft = np.einsum("nab,nb->na", model.rep(g), f)
    return x, ft, g
