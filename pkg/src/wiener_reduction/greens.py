"""Monte Carlo estimators for semigroup actions and Green's-function relations.

Every comparison is made in weak form: kernels are integrated against a
smooth test function, so each side is an expectation with a standard error.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ive

from . import geometry as geo
from . import holonomy as hol
from . import parallel
from . import rng as crng
from .fields import orbit_coefficients
from .geometry import ModelSpec
from .models import IrrepSpec
from .sde import RunParams, simulate_reduced_block, simulate_total_block

EXIT_LIMIT = 0.01
POWER_LIMIT = 0.10


# ---------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class TestFunction:
    """Gaussian bump exp(-|y - c|^2 / (2 w^2)) on the orbit space, optionally
    multiplied by a polynomial factor (1 + p . (y - c))."""

    __test__ = False  # not a pytest class

    center: tuple
    width: float = 0.5
    tilt: tuple | None = None

    @property
    def support_radius(self) -> float:
        return 8.0 * self.width

    def _parts(self, y):
        y = np.asarray(y, float)
        c = np.asarray(self.center, float)
        u = y - c
        g = np.exp(-0.5 * np.sum(u * u, -1) / self.width ** 2)
        return u, g

    def __call__(self, y):
        u, g = self._parts(y)
        if self.tilt is None:
            return g
        return g * (1.0 + u @ np.asarray(self.tilt, float))

    def grad(self, y):
        u, g = self._parts(y)
        w2 = self.width ** 2
        if self.tilt is None:
            return -g[..., None] * u / w2
        p = np.asarray(self.tilt, float)
        poly = 1.0 + u @ p
        return g[..., None] * (p - poly[..., None] * u / w2)

    def hess(self, y):
        u, g = self._parts(y)
        w2 = self.width ** 2
        n = u.shape[-1]
        uu = u[..., :, None] * u[..., None, :]
        base = g[..., None, None] * (uu / w2 ** 2 - np.eye(n) / w2)
        if self.tilt is None:
            return base
        p = np.asarray(self.tilt, float)
        poly = 1.0 + u @ p
        pu = p[:, None] * u[..., None, :]
        cross = -g[..., None, None] * (pu + np.swapaxes(pu, -1, -2)) / w2
        return poly[..., None, None] * base + cross

    def lift(self, model: ModelSpec, irrep: IrrepSpec, Q, f):
        """Equivariant extension D(a) phi(x, ft) to the total space, (N, r, r)."""
        x, ft, g = geo.to_adapted(model, Q, f)
        return irrep.D(g) * self(geo.join(x, ft))[:, None, None]


def scalar_suite(center, width: float = 0.5):
    """Test functions used by the generator check: a plain bump, a tilted
    bump and a narrower bump displaced from the evaluation point."""
    c = np.asarray(center, float)
    n = c.size
    tilt = tuple(0.3 * (-1.0) ** np.arange(n))
    shift = np.zeros(n)
    shift[-1] = 0.5 * width
    return [
        TestFunction(tuple(c), width),
        TestFunction(tuple(c), width, tilt),
        TestFunction(tuple(c + shift), 0.6 * width),
    ]


# ---------------------------------------------------------------------------
# estimates


@dataclass
class GreenEstimate:
    value: np.ndarray            # (r, r) complex
    stderr: np.ndarray           # (r, r) real
    n_effective: int
    n_paths: int
    exit_fraction: float
    aborted: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def flagged(self) -> bool:
        return self.exit_fraction > EXIT_LIMIT

    def to_dict(self):
        return {
            "value_re": np.real(self.value).tolist(),
            "value_im": np.imag(self.value).tolist(),
            "stderr": np.asarray(self.stderr).tolist(),
            "n_effective": int(self.n_effective),
            "n_paths": int(self.n_paths),
            "exit_fraction": float(self.exit_fraction),
            "aborted": int(self.aborted),
            "flagged": bool(self.flagged),
            **({"metadata": self.metadata} if self.metadata else {}),
        }


def summarize(samples, alive, aborted=None, metadata=None) -> GreenEstimate:
    """Mean and per-entry stderr over surviving paths.

    For complex entries the stderr is sqrt((var Re + var Im) / n)."""
    samples = np.asarray(samples)
    if samples.ndim == 1:
        samples = samples[:, None, None]
    n_paths = samples.shape[0]
    s = samples[alive]
    n = s.shape[0]
    if n == 0:
        nanm = np.full(samples.shape[1:], np.nan)
        return GreenEstimate(nanm + 0j, nanm, 0, n_paths, 1.0, 0, metadata or {})
    mean = s.mean(axis=0)
    if n > 1:
        var = s.real.var(axis=0, ddof=1) + s.imag.var(axis=0, ddof=1)
        se = np.sqrt(var / n)
    else:
        se = np.full(mean.shape, np.inf)
    return GreenEstimate(mean.astype(complex), se, n, n_paths, 1.0 - n / max(n_paths, 1),
                         int(np.sum(aborted)) if aborted is not None else 0,
                         metadata or {})


def compare(a: GreenEstimate, b: GreenEstimate, z_max: float = 3.0,
            power_limit: float = POWER_LIMIT):
    """Entrywise z-scores; verdict pass / fail / inconclusive."""
    diff = np.abs(a.value - b.value)
    se = np.sqrt(a.stderr ** 2 + b.stderr ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / se, np.where(diff == 0, 0.0, np.inf))
    dominant = float(max(np.max(np.abs(a.value)), np.max(np.abs(b.value))))
    worst_se = float(max(np.max(a.stderr), np.max(b.stderr)))
    rel_se = worst_se / dominant if dominant > 0 else np.inf
    if not np.isfinite(rel_se) or rel_se > power_limit:
        verdict = "inconclusive"
    elif a.flagged or b.flagged:
        verdict = "fail"
    else:
        verdict = "pass" if np.all(z < z_max) else "fail"
    return {
        "z": z.tolist(),
        "max_abs_z": float(np.max(z)),
        "dominant_magnitude": dominant,
        "relative_stderr": rel_se,
        "verdict": verdict,
    }


# ---------------------------------------------------------------------------
# ensemble runners


def _reduced_task(model, irrep, params, y0, mode, seed, weight, test, analytic, scheme):
    def task(first, count):
        blk = simulate_reduced_block(model, irrep, params, y0, mode, seed, first, count,
                                     analytic=analytic, scheme=scheme)
        phi = test(blk.end)
        logw = blk.log_potential.copy()
        if weight == "girsanov":
            logw += blk.log_jacobian + hol.jacobian_boundary(blk.sigma_start, blk.sigma_end)
        elif weight == "relation":
            # G~ estimator (bulk Jacobian only), composed with the prefactor
            # d_b^{-1/4} d_a^{-1/4} and the conversion sqrt(d_b) between the
            # sqrt(H) and sqrt(d H) volume densities
            logw += (blk.log_jacobian
                     - 0.25 * blk.sigma_end - 0.25 * blk.sigma_start
                     + 0.5 * blk.sigma_end)
        w = np.exp(logw)
        samples = blk.Z * (w * phi)[:, None, None]
        return samples, blk.alive, blk.extra["aborted"], w
    return task


def run_reduced(model: ModelSpec, irrep: IrrepSpec, test: TestFunction, y0,
                params: RunParams, mode: str, weight: str, seed: int, workers: int = 1,
                analytic: bool = True, scheme: str = "exp", keep_weights: bool = False):
    task = _reduced_task(model, irrep, params, y0, mode, seed, weight, test, analytic, scheme)
    parts = parallel.map_blocks(task, parallel.blocks(params.n_paths), workers)
    if not parts:
        empty = np.zeros((0, irrep.dim, irrep.dim), complex)
        return summarize(empty, np.zeros(0, bool)), None
    samples = np.concatenate([p[0] for p in parts])
    alive = np.concatenate([p[1] for p in parts])
    aborted = np.concatenate([p[2] for p in parts])
    est = summarize(samples, alive, aborted)
    extra = None
    if keep_weights:
        extra = {"weights": np.concatenate([p[3] for p in parts]), "alive": alive,
                 "samples": samples}
    return est, extra


def _start_value(model, irrep, test, y0, weight):
    y0 = np.atleast_2d(np.asarray(y0, float))
    val = test(y0)[0] * irrep.identity
    if weight == "relation":
        s = orbit_coefficients(model, y0).sigma[0]
        val = val * np.exp(-0.25 * s - 0.25 * s + 0.5 * s)
    return val


def feynman_kac_reduced(model, test, irrep, y0, params: RunParams, variant: str = "original",
                        workers: int = 1, seed: int | None = None, analytic: bool = True,
                        scheme: str = "exp"):
    """E[Z phi(end) exp(potential [+ Jacobian])] along the reduced process."""
    if variant not in ("original", "girsanov"):
        raise ValueError(f"unknown variant {variant!r}")
    seed = crng.derive_seed(params.master_seed, variant) if seed is None else seed
    if params.n_steps == 0:
        v = _start_value(model, irrep, test, y0, variant)
        n = params.n_paths
        return GreenEstimate(v, np.zeros(v.shape), n, n, 0.0)
    est, _ = run_reduced(model, irrep, test, y0, params, variant, variant, seed, workers,
                         analytic, scheme)
    est.metadata.update({"variant": variant, "seed": int(seed), "model": model.name,
                         "irrep": irrep.label})
    return est


def feynman_kac_total(model: ModelSpec, phi0, start, params: RunParams, workers: int = 1,
                      seed: int | None = None, keep_weights: bool = False):
    """E[phi0(eta(t_b)) exp(int V / (mu^2 kappa m))] over total-space paths.

    ``phi0`` maps (Q, f) batches to (N,) or (N, r, r) values."""
    seed = crng.derive_seed(params.master_seed, "total") if seed is None else seed
    start = np.asarray(start, float)
    if params.n_steps == 0:
        z = start[None]
        v = np.asarray(phi0(z[:, :model.n_P], z[:, model.n_P:]))
        v = v.reshape(1, *(v.shape[1:] or (1, 1)))[0].astype(complex)
        return GreenEstimate(v, np.zeros(v.shape), params.n_paths, params.n_paths, 0.0)

    def task(first, count):
        blk = simulate_total_block(model, params, start, seed, first, count)
        Q, f = blk.end[:, :model.n_P], blk.end[:, model.n_P:]
        val = np.asarray(phi0(Q, f))
        if val.ndim == 1:
            val = val[:, None, None]
        w = np.exp(blk.log_potential)
        return val * w[:, None, None], blk.alive, w

    parts = parallel.map_blocks(task, parallel.blocks(params.n_paths), workers)
    samples = np.concatenate([p[0] for p in parts])
    alive = np.concatenate([p[1] for p in parts])
    est = summarize(samples, alive)
    est.metadata.update({"seed": int(seed), "model": model.name})
    if keep_weights:
        return est, {"weights": np.concatenate([p[2] for p in parts]), "alive": alive,
                     "samples": samples}
    return est


# ---------------------------------------------------------------------------
# checks


def girsanov_consistency(model, test, irrep, y0, params: RunParams, workers: int = 1,
                         analytic: bool = True, scheme: str = "exp"):
    """Original-process functional against the Girsanov-transformed one,
    with independent seeds for the two sides."""
    seed_o = crng.derive_seed(params.master_seed, "reduced-original")
    seed_g = crng.derive_seed(params.master_seed, "reduced-girsanov")
    lhs = feynman_kac_reduced(model, test, irrep, y0, params, "original", workers, seed_o,
                              analytic, scheme)
    rhs = feynman_kac_reduced(model, test, irrep, y0, params, "girsanov", workers, seed_g,
                              analytic, scheme)
    cmp = compare(lhs, rhs)
    return {"original": lhs.to_dict(), "girsanov": rhs.to_dict(), **cmp,
            "exit_fraction": max(lhs.exit_fraction, rhs.exit_fraction)}


def haar_projection(model: ModelSpec, irrep: IrrepSpec, raw, Q, f, n_nodes=None):
    """int raw(p g^{-1}) D(g) dmu(g) by the group's quadrature rule.

    ``raw(Q, f)`` returns (N, r, r).  For an equivariant ``raw`` this
    reproduces ``raw`` itself."""
    G = model.group
    nodes, weights = G.quadrature() if n_nodes is None else G.quadrature(n_nodes)
    out = 0.0
    for g, w in zip(nodes, weights):
        gb = np.broadcast_to(g, (Q.shape[0], g.shape[0]))
        ginv = G.inv(gb)
        Qg = model.action(Q, ginv)
        fg = np.einsum("nab,nb->na", model.rep_bar(ginv), f)
        out = out + w * (raw(Qg, fg) @ irrep.D(gb))
    return out


def haar_average_rhs(model, test, irrep, start_y, params: RunParams, workers: int = 1,
                     seed: int | None = None, quadrature: bool | None = None,
                     keep_weights: bool = False):
    """Total-space estimate of the Haar-projected kernel smeared against phi.

    For one-dimensional irreps the Haar integral is absorbed by evaluating
    the equivariant lift at the endpoint; otherwise the lift is projected
    explicitly with the group quadrature rule."""
    y = np.atleast_2d(np.asarray(start_y, float))
    x, ft = geo.split(model, y)
    Q0, f0 = geo.from_adapted(model, x, ft, model.group.identity[None])
    start = np.concatenate([Q0[0], f0[0]])
    if quadrature is None:
        quadrature = irrep.dim > 1

    def lift(Q, f):
        return test.lift(model, irrep, Q, f)

    if quadrature:
        def phi0(Q, f):
            return haar_projection(model, irrep, lift, Q, f)
    else:
        phi0 = lift
    return feynman_kac_total(model, phi0, start, params, workers, seed, keep_weights)


def relation_check(model, test, irrep, y0, params: RunParams, workers: int = 1,
                   analytic: bool = True, oracle: bool = True, keep_weights: bool = False,
                   scheme: str = "exp"):
    """Reduced-side estimate of d_b^{-1/4} d_a^{-1/4} G~ (smeared, with the
    volume conversion) against the Haar-projected total-space estimate."""
    if params.n_steps == 0:
        raise ValueError("degenerate configuration: t_b equals t_a")
    seed_l = crng.derive_seed(params.master_seed, "relation-reduced")
    seed_r = crng.derive_seed(params.master_seed, "relation-total")
    lhs, lw = run_reduced(model, irrep, test, y0, params, "girsanov", "relation", seed_l,
                          workers, analytic, scheme, keep_weights=keep_weights)
    rhs_out = haar_average_rhs(model, test, irrep, y0, params, workers, seed_r,
                               keep_weights=keep_weights)
    rhs, rw = rhs_out if keep_weights else (rhs_out, None)
    cmp = compare(lhs, rhs)
    report = {"lhs": lhs.to_dict(), "rhs": rhs.to_dict(), **cmp,
              "exit_fraction": max(lhs.exit_fraction, rhs.exit_fraction),
              "density_convention": "G-lambda density w.r.t. sqrt(d H) dx dft; "
                                    "G-tilde density w.r.t. sqrt(H) dx dft"}
    if oracle and model.name == "so2-planar" and model.params.get("coupling", 0.0) == 0.0:
        ref = so2_free_oracle(test, irrep.value, y0, params.mu ** 2 * params.kappa
                              * (params.t_b - params.t_a))
        se = float(rhs.stderr[0, 0])
        z = abs(rhs.value[0, 0] - ref) / se if se > 0 else np.inf
        report["oracle"] = {"value_re": float(ref.real), "value_im": float(ref.imag),
                            "z_rhs": float(z),
                            "z_lhs": float(abs(lhs.value[0, 0] - ref) / lhs.stderr[0, 0])}
        if report["verdict"] == "pass" and not (z < 3.0 and report["oracle"]["z_lhs"] < 3.0):
            report["verdict"] = "fail"
    if keep_weights:
        report["_weights"] = {"lhs": lw, "rhs": rw}
    return report


# ---------------------------------------------------------------------------
# analytic oracle for the free rotation model


def so2_free_oracle(test: TestFunction, lam: float, y0, s2: float, n_nodes: int = 64):
    """E[e^{i lam a} phi(x, ft)] for Brownian motion on R^2 x R^2 started on
    the section at (x_a, 0; f_a), as a dense Gauss-Legendre integral.

    The angular integral is done in closed form with modified Bessel
    functions: int e^{rho cos(a - psi) + i lam a} da = 2 pi I_lam(rho) e^{i lam psi}.
    """
    y0 = np.asarray(y0, float).ravel()
    xa, fa = y0[0], y0[1:]
    c = np.asarray(test.center, float)
    R = test.support_radius
    xg, wg = np.polynomial.legendre.leggauss(n_nodes)

    def nodes(lo, hi):
        return 0.5 * (hi - lo) * xg + 0.5 * (hi + lo), 0.5 * (hi - lo) * wg

    r, wr = nodes(max(c[0] - R, 0.0), c[0] + R)
    f1, w1 = nodes(c[1] - R, c[1] + R)
    f2, w2 = nodes(c[2] - R, c[2] + R)
    Rr, F1, F2 = np.meshgrid(r, f1, f2, indexing="ij")
    W = wr[:, None, None] * w1[None, :, None] * w2[None, None, :]
    A = (Rr * xa + fa[0] * F1 + fa[1] * F2) / s2
    B = (fa[0] * F2 - fa[1] * F1) / s2
    rho = np.hypot(A, B)
    psi = np.arctan2(B, A)
    expo = -(Rr ** 2 + xa ** 2 + F1 ** 2 + F2 ** 2 + fa @ fa) / (2 * s2) + rho
    ang = 2 * np.pi * ive(abs(lam), rho) * np.exp(1j * lam * psi)
    phi = test(np.stack([Rr, F1, F2], -1))
    dens = (2 * np.pi * s2) ** -2 * np.exp(expo)
    return complex(np.sum(W * Rr * dens * ang * phi))


def so2_free_oracle_trapezoid(test, lam, y0, s2, n_nodes: int = 64, n_angle: int = 64):
    """Same integral with the angle done by a periodic trapezoid rule."""
    y0 = np.asarray(y0, float).ravel()
    xa, fa = y0[0], y0[1:]
    c = np.asarray(test.center, float)
    R = test.support_radius
    xg, wg = np.polynomial.legendre.leggauss(n_nodes)

    def nodes(lo, hi):
        return 0.5 * (hi - lo) * xg + 0.5 * (hi + lo), 0.5 * (hi - lo) * wg

    r, wr = nodes(max(c[0] - R, 0.0), c[0] + R)
    f1, w1 = nodes(c[1] - R, c[1] + R)
    f2, w2 = nodes(c[2] - R, c[2] + R)
    Rr, F1, F2 = np.meshgrid(r, f1, f2, indexing="ij")
    W = wr[:, None, None] * w1[None, :, None] * w2[None, None, :]
    phi = test(np.stack([Rr, F1, F2], -1))
    total = 0.0
    for a in 2 * np.pi * np.arange(n_angle) / n_angle:
        ca, sa = np.cos(a), np.sin(a)
        # f = R(-a) ft
        g1 = ca * F1 + sa * F2
        g2 = -sa * F1 + ca * F2
        d2 = (Rr * ca - xa) ** 2 + (Rr * sa) ** 2 + (g1 - fa[0]) ** 2 + (g2 - fa[1]) ** 2
        total = total + np.exp(-d2 / (2 * s2)) * np.exp(1j * lam * a)
    dens = (2 * np.pi * s2) ** -2 * total * (2 * np.pi / n_angle)
    return complex(np.sum(W * Rr * dens * phi))


# ---------------------------------------------------------------------------
# generator check


def _gh_rule(dim: int, n: int):
    x, w = np.polynomial.hermite_e.hermegauss(n)
    w = w / w.sum()
    pts = np.array(list(itertools.product(x, repeat=dim)))
    wts = np.prod(np.array(list(itertools.product(w, repeat=dim))), axis=1)
    return pts, wts


def one_step_expectation(model, irrep, test, y, params: RunParams, dt, mode, n_gh=None,
                         analytic=True, scheme="exp"):
    """E[Z_dt phi(xi_dt)] (times the one-step scalar weights) computed exactly
    over the Gaussian increment by tensor Gauss-Hermite quadrature."""
    y = np.atleast_2d(np.asarray(y, float))
    nR = model.n_R
    n_gh = n_gh or (12 if nR <= 3 else 7)
    pts, wts = _gh_rule(nR, n_gh)
    co = orbit_coefficients(model, y, analytic=analytic)
    b = co.b_full if mode == "original" else co.b_tilde
    mu, kappa = params.mu, params.kappa
    dw = np.sqrt(dt) * pts
    y1 = (y + 0.5 * mu * mu * kappa * b * dt
          + mu * np.sqrt(kappa) * dw @ co.X[0].T)
    logw = co.potential[0] * dt * params.pot_scale
    if mode == "girsanov":
        logw += hol.jacobian_increment(co, mu, kappa, dt)[0]
    phi = test(y1)
    if irrep.trivial:
        Z = np.broadcast_to(irrep.identity, (len(pts),) + irrep.identity.shape)
    else:
        M, L = hol.integrand(co, irrep, mu, kappa, mode)
        n = len(pts)
        Z = hol.step_factor(np.broadcast_to(M, (n,) + M.shape[1:]),
                            np.broadcast_to(L, (n,) + L.shape[1:]), dw, dt, scheme)
    return np.exp(logw) * np.einsum("n,nij->ij", wts * phi, Z)


def generator_apply(model, irrep, test, y, params: RunParams, mode: str, analytic=True):
    """The matrix generator applied to phi(y) I, assembled term by term from
    geometric quantities (not from the discrete scheme)."""
    y = np.atleast_2d(np.asarray(y, float))
    nM = model.n_M
    x, ft = geo.split(model, y)
    fr = geo.make_frame(model, x, ft)
    co = orbit_coefficients(model, y, analytic=analytic)
    mu, kappa = params.mu, params.kappa
    c2 = 0.5 * mu * mu * kappa
    g = test.grad(y)[0]
    Hs = test.hess(y)[0]
    phi = test(y)[0]
    b = (co.b_full if mode == "original" else co.b_tilde)[0]
    scalar = c2 * (np.sum(co.Hinv[0] * Hs) + b @ g)
    if mode == "girsanov":
        scalar += c2 * (-0.25 * co.jac_integrand[0]) * phi
    scalar += co.potential[0] * params.pot_scale * phi
    Ag = fr.conn_gamma[0]
    h_inv = fr.h_inv[0]
    K = fr.K_V[0]
    c_x = h_inv @ Ag.T                                 # [i, beta]
    c_f = K @ (Ag @ h_inv @ Ag.T)                      # [a, beta]
    hb = K @ fr.gamma_inv[0] @ K.T + fr.G_V_inv[0]
    c_b = hb @ fr.conn_d_p[0].T                        # [b, beta]
    first = -2.0 * (g[:nM] @ c_x + g[nM:] @ c_f + g[nM:] @ c_b)   # (nG,)
    lin = (co.lin_dH if mode == "original" else co.lin_H)[0]
    J = irrep.generators
    out = scalar * irrep.identity
    out = out + c2 * np.einsum("b,bij->ij", first - lin * phi, J)
    out = out + c2 * phi * np.einsum("ab,aij,bjk->ik", fr.GLL[0], J, J)
    return out


def generator_fd_check(model, irrep, test, y, params: RunParams, mode: str = "original",
                       dts=(1e-3, 5e-4), analytic=True, scheme: str = "exp"):
    """Compare the assembled generator with one-step expectations at two dt."""
    y = np.atleast_2d(np.asarray(y, float))
    Lphi = generator_apply(model, irrep, test, y, params, mode, analytic)
    phi = test(y)[0]
    D = [(one_step_expectation(model, irrep, test, y, params, dt, mode, analytic=analytic,
                               scheme=scheme)
          - phi * irrep.identity) / dt for dt in dts]
    errs = [float(np.max(np.abs(d - Lphi))) for d in D]
    rich = 2.0 * D[1] - D[0]
    rich_err = float(np.max(np.abs(rich - Lphi)))
    scale = float(max(np.max(np.abs(Lphi)), 1e-300))
    ratio = errs[0] / errs[1] if errs[1] > 0 else np.inf
    return {
        "model": model.name, "irrep": irrep.label, "mode": mode, "point": y[0].tolist(),
        "generator_re": np.real(Lphi).tolist(), "generator_im": np.imag(Lphi).tolist(),
        "dts": list(dts), "errors": errs, "error_ratio": ratio,
        "richardson_error": rich_err,
        "relative_error": [e / scale for e in errs],
        "richardson_relative_error": rich_err / scale,
        "pass": bool(1.6 <= ratio <= 2.4 and rich_err / scale < 5e-2),
    }
