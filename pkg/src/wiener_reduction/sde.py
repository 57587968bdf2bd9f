"""Euler-Maruyama integration of the total-space and reduced processes.

Paths are simulated in blocks.  The Gaussian increments of path ``k`` at step
``s`` depend only on ``(seed, stream, s, k)``, so any partition of the path
index range into blocks gives the same per-path results.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import holonomy as hol
from . import rng as crng
from .fields import orbit_coefficients, sqrt_factor, total_drift
from .geometry import ModelSpec
from .models import IrrepSpec, trivial_irrep

MODES = ("total", "original", "girsanov")


class ParamError(ValueError):
    pass


@dataclass(frozen=True)
class RunParams:
    mu: float = 1.0
    kappa: float = 1.0
    m: float = 1.0
    t_a: float = 0.0
    t_b: float = 0.25
    dt: float = 1e-3
    n_paths: int = 200_000
    master_seed: int = 20240611
    x_min: float = 0.05

    def __post_init__(self):
        for k in ("mu", "kappa", "m"):
            if not getattr(self, k) > 0:
                raise ParamError(f"{k} must be positive")
        if not self.t_b >= self.t_a:
            raise ParamError("t_b must not precede t_a")
        if not self.dt > 0:
            raise ParamError("dt must be positive")
        if self.n_paths < 0:
            raise ParamError("n_paths must be non-negative")
        r = (self.t_b - self.t_a) / self.dt
        if abs(r - round(r)) > 1e-12 * max(1.0, r) + 1e-9:
            raise ParamError("dt must divide t_b - t_a")

    @property
    def n_steps(self) -> int:
        return int(round((self.t_b - self.t_a) / self.dt))

    @property
    def diffusion(self) -> float:
        return self.mu * np.sqrt(self.kappa)

    @property
    def pot_scale(self) -> float:
        return 1.0 / (self.mu ** 2 * self.kappa * self.m)

    def with_(self, **kw) -> "RunParams":
        d = asdict(self)
        d.update(kw)
        return RunParams(**d)


@dataclass
class PathState:
    mode: str
    coords: np.ndarray            # (N, n) : (Q, f) stacked or (x, ft)
    time: float
    alive: np.ndarray             # (N,) bool


# ---------------------------------------------------------------------------
# guards


def reduced_admitted(model: ModelSpec, y, x_min: float):
    x = y[..., :model.n_M]
    ok = model.x_domain(x) & np.all(np.isfinite(y), axis=-1)
    if model.params.get("radial"):
        ok &= x[..., 0] >= x_min
    return ok


def total_admitted(model: ModelSpec, z, x_min: float):
    Q = z[..., :model.n_P]
    ok = model.q_domain(Q) & np.all(np.isfinite(z), axis=-1)
    if model.params.get("radial"):
        ok &= np.linalg.norm(Q, axis=-1) >= x_min
    return ok


# ---------------------------------------------------------------------------
# single steps


def step_total(model: ModelSpec, state: PathState, dw_P, dw_V, dt, params: RunParams):
    z = state.coords
    Q = z[..., :model.n_P]
    f = z[..., model.n_P:]
    if model.params.get("flat_P", False):
        # constant metric: one factorization serves the whole batch
        G_inv = np.linalg.inv(model.metric_P(Q[:1]))
        X_P = np.broadcast_to(sqrt_factor(G_inv, check=False), (Q.shape[0],) + G_inv.shape[1:])
    else:
        G_inv = np.linalg.inv(model.metric_P(Q))
        X_P = sqrt_factor(0.5 * (G_inv + np.swapaxes(G_inv, -1, -2)), check=False)
    X_V = sqrt_factor(np.linalg.inv(model.metric_V))
    s = params.diffusion
    Qn = (Q + 0.5 * params.mu ** 2 * params.kappa * total_drift(model, Q) * dt
          + s * np.einsum("nab,nb->na", X_P, dw_P))
    fn = f + s * dw_V @ X_V.T
    zn = np.concatenate([Qn, fn], -1)
    alive = state.alive & total_admitted(model, zn, params.x_min)
    zn = np.where(alive[:, None], zn, z)
    return PathState("total", zn, state.time + dt, alive)


def drift_reduced(co, mode: str):
    return co.b_full if mode == "original" else co.b_tilde


def step_reduced(model: ModelSpec, state: PathState, co, mode: str, dw, dt,
                 params: RunParams):
    """One Euler step of the reduced process; ``dw`` has n_M + n_V columns
    (section noise first, then the vector noise)."""
    y = state.coords
    b = drift_reduced(co, mode)
    yn = (y + 0.5 * params.mu ** 2 * params.kappa * b * dt
          + params.diffusion * np.einsum("nij,nj->ni", co.X, dw))
    alive = state.alive & reduced_admitted(model, yn, params.x_min)
    yn = np.where(alive[:, None], yn, y)
    return PathState(mode, yn, state.time + dt, alive)


# ---------------------------------------------------------------------------
# block simulation


@dataclass
class PathBlock:
    """Per-path results for a contiguous block of path indices."""

    mode: str
    first_path: int
    end: np.ndarray               # final coordinates
    alive: np.ndarray
    log_potential: np.ndarray
    Z: np.ndarray | None = None   # (N, r, r) including renormalisation scale
    log_jacobian: np.ndarray | None = None   # bulk part
    sigma_start: np.ndarray | None = None
    sigma_end: np.ndarray | None = None
    extra: dict = field(default_factory=dict)
    trajectory: np.ndarray | None = None     # (steps+1, N, n)
    z_trajectory: np.ndarray | None = None   # (steps+1, N, r, r)


def simulate_total_block(model: ModelSpec, params: RunParams, start, seed: int,
                         first_path: int, n_paths: int, stream="total",
                         record: bool = False) -> PathBlock:
    z0 = np.broadcast_to(np.asarray(start, float), (n_paths, model.n_P + model.n_V)).copy()
    alive = total_admitted(model, z0, params.x_min)
    st = PathState("total", z0, params.t_a, alive)
    logp = np.zeros(n_paths)
    traj = [z0.copy()] if record else None
    dim = model.n_P + model.n_V
    for s in range(params.n_steps):
        Q = st.coords[:, :model.n_P]
        f = st.coords[:, model.n_P:]
        logp += np.where(st.alive, model.potential(Q, f) * params.dt * params.pot_scale, 0.0)
        dw = crng.increments(seed, stream, s, first_path, n_paths, dim, params.dt)
        st = step_total(model, st, dw[:, :model.n_P], dw[:, model.n_P:], params.dt, params)
        if record:
            traj.append(st.coords.copy())
    return PathBlock("total", first_path, st.coords, st.alive, logp,
                     trajectory=np.stack(traj) if record else None)


def simulate_reduced_block(model: ModelSpec, irrep: IrrepSpec, params: RunParams, y0,
                           mode: str, seed: int, first_path: int, n_paths: int,
                           stream=None, record: bool = False, ito_check: bool = False,
                           scheme: str = "exp", analytic: bool = True) -> PathBlock:
    """Simulate the reduced process ``mode`` in {"original", "girsanov"} and
    accumulate the multiplicative functional for ``irrep``.

    With ``ito_check`` the stochastic-integral form of the Jacobian exponent
    is accumulated alongside (plain Ito sum and a Milstein-corrected sum).
    """
    if mode not in ("original", "girsanov"):
        raise ValueError(f"unknown reduced mode {mode!r}")
    stream = stream or f"reduced-{mode}"
    nR = model.n_R
    y = np.broadcast_to(np.asarray(y0, float), (n_paths, nR)).copy()
    alive = reduced_admitted(model, y, params.x_min)
    st = PathState(mode, y, params.t_a, alive)
    acc = hol.MatrixAccumulator.identity(n_paths, irrep.dim)
    trivial = irrep.trivial
    mu, kappa, dt = params.mu, params.kappa, params.dt
    traj = [y.copy()] if record else None
    ztraj = [acc.value()] if record else None
    sig0 = None
    if ito_check:
        ito_plain = np.zeros(n_paths)
        ito_mil = np.zeros(n_paths)
    for s in range(params.n_steps):
        co = orbit_coefficients(model, st.coords, analytic=analytic)
        if s == 0:
            sig0 = co.sigma.copy()
        dw = crng.increments(seed, stream, s, first_path, n_paths, nR, dt)
        if trivial:
            M = L = None
        else:
            M, L = hol.integrand(co, irrep, mu, kappa, mode)
        jac = hol.jacobian_increment(co, mu, kappa, dt) if mode == "girsanov" else None
        hol.accumulate_step(acc, M, L, dw, dt, jac_inc=jac, pot=co.potential,
                            pot_scale=params.pot_scale, scheme=scheme,
                            active=st.alive, trivial=trivial)
        if ito_check:
            dM = params.diffusion * np.einsum("nij,nj->ni", co.X, dw)
            lin = np.einsum("ni,ni->n", co.grad_sigma, dM)
            quad = 0.5 * np.einsum("ni,nij,nj->n", dM, co.hess_sigma, dM)
            corr = -0.5 * mu * mu * kappa * dt * np.einsum("nij,nij->n", co.Hinv, co.hess_sigma)
            base = -mu * mu * kappa * co.dsd * dt / 32.0
            a = st.alive
            ito_plain += np.where(a, 0.25 * lin + base, 0.0)
            ito_mil += np.where(a, 0.25 * (lin + quad + corr) + base, 0.0)
        st = step_reduced(model, st, co, mode, dw, dt, params)
        st.alive &= ~acc.aborted
        if record:
            traj.append(st.coords.copy())
            ztraj.append(acc.value())
    if params.n_steps == 0:
        sig0 = orbit_coefficients(model, y, analytic=analytic).sigma
    sig_end = orbit_coefficients(model, st.coords, analytic=analytic).sigma
    blk = PathBlock(mode, first_path, st.coords, st.alive, acc.log_potential,
                    Z=acc.value(), log_jacobian=acc.log_jacobian,
                    sigma_start=sig0, sigma_end=sig_end,
                    trajectory=np.stack(traj) if record else None,
                    z_trajectory=np.stack(ztraj) if record else None)
    blk.extra["aborted"] = acc.aborted
    if ito_check:
        blk.extra["ito_plain"] = ito_plain
        blk.extra["ito_milstein"] = ito_mil
    return blk


def simulate_path(model: ModelSpec, start, mode: str, params: RunParams, path_index: int = 0,
                  irrep: IrrepSpec | None = None, seed: int | None = None) -> PathBlock:
    """A single recorded trajectory (convenience wrapper around the block code)."""
    seed = params.master_seed if seed is None else seed
    if mode == "total":
        return simulate_total_block(model, params, start, seed, path_index, 1, record=True)
    irrep = irrep or trivial_irrep(model.n_G)
    return simulate_reduced_block(model, irrep, params, start, mode, seed, path_index, 1,
                                  record=True)


__all__ = ["RunParams", "PathState", "PathBlock", "ParamError", "step_total",
           "step_reduced", "drift_reduced", "simulate_total_block",
           "simulate_reduced_block", "simulate_path", "reduced_admitted",
           "total_admitted", "sqrt_factor"]
