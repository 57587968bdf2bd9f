"""Matrix-valued multiplicative functionals along reduced paths.

The generator-valued coefficients live in :mod:`fields`; this module turns
them into per-step matrices for a chosen irrep and accumulates the
time-ordered product, the reduction Jacobian and the potential weight.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .fields import OrbitCoefficients
from .geometry import GeometryFrame, ModelSpec
from .models import IrrepSpec

OVERFLOW = 1e100


class AccumulatorOverflowError(ArithmeticError):
    def __init__(self, step: int, msg: str = "non-finite multiplicative functional"):
        super().__init__(f"{msg} at step {step}")
        self.step = step


def _jj(irrep: IrrepSpec):
    J = irrep.generators
    return np.einsum("aij,bjk->abik", J, J)


# ---------------------------------------------------------------------------
# coefficient matrices


def gamma3(fr: GeometryFrame, irrep: IrrepSpec, d_n, d_b):
    """Gamma~_3n for each section direction n, shape (N, n_M, r, r)."""
    J = irrep.generators
    A = fr.conn_gamma                                     # (N, nG, nM)
    conn_part = np.einsum("nbm,bij->nmij", A, J)
    # A_(gamma)^nu_n K^b_nu d_b
    scal = d_n + np.einsum("nvm,nbv,nb->nm", A, fr.K_V, d_b)
    return conn_part - 0.5 * scal[..., None, None] * irrep.identity


def gamma4(fr: GeometryFrame, irrep: IrrepSpec, d_b):
    """Gamma~_4c for each vector direction c, shape (N, n_V, r, r)."""
    J = irrep.generators
    conn_part = np.einsum("nbc,bij->ncij", fr.conn_d_p, J)
    return conn_part - 0.5 * d_b[..., None, None] * irrep.identity


def mprime(co: OrbitCoefficients, irrep: IrrepSpec):
    """Closed form: -(1/32)<ds,ds> I - (1/2) lin_H . J + (1/2) d^{ab} J_a J_b."""
    J = irrep.generators
    diag = (-co.dsd / 32.0)[..., None, None] * irrep.identity
    lin = -0.5 * np.einsum("nb,bij->nij", co.lin_H, J)
    quad = 0.5 * np.einsum("nab,abij->nij", co.dinv, _jj(irrep))
    return diag + lin + quad


def mprime_assembled(model: ModelSpec, fr: GeometryFrame, co: OrbitCoefficients,
                     irrep: IrrepSpec):
    """M' from the generator-matching equation: the J-linear and J-quadratic
    parts of the original generator minus (1/2)(G3 h G3 + G4 hb G4), with the
    vector block hb of the b-bar noise."""
    nM = model.n_M
    dn = 0.5 * co.grad_sigma[..., :nM]
    db = 0.5 * co.grad_sigma[..., nM:]
    G3 = gamma3(fr, irrep, dn, db)
    G4 = gamma4(fr, irrep, db)
    J = irrep.generators
    quad = 0.5 * np.einsum("nab,abij->nij", fr.GLL, _jj(irrep))
    lin = -0.5 * np.einsum("nb,bij->nij", co.lin_dH, J)
    Xa_m = co.X[..., nM:, :nM]
    hb = co.Hinv[..., nM:, nM:] - Xa_m @ np.swapaxes(Xa_m, -1, -2)
    s3 = np.einsum("nkl,nkij,nljm->nim", fr.h_inv, G3, G3)
    s4 = np.einsum("nac,naij,ncjm->nim", hb, G4, G4)
    return quad + lin - 0.5 * (s3 + s4)


def integrand(co: OrbitCoefficients, irrep: IrrepSpec, mu: float, kappa: float,
              variant: str):
    """Per-step drift matrix M and diffusion matrices L (one per noise column).

    ``variant`` is ``"original"`` (volume sqrt(det d H) in the divergences) or
    ``"girsanov"`` (volume sqrt(H)).
    """
    lin = co.lin_dH if variant == "original" else co.lin_H
    J = irrep.generators
    M = mu * mu * kappa * (0.5 * np.einsum("nab,abij->nij", co.dinv, _jj(irrep))
                           - 0.5 * np.einsum("nb,bij->nij", lin, J))
    L = -mu * np.sqrt(kappa) * np.einsum("ncb,bij->ncij", co.noise, J)
    return M, L


def integrand_original(co, irrep, mu, kappa):
    return integrand(co, irrep, mu, kappa, "original")


def integrand_reduced(co, irrep, mu, kappa):
    return integrand(co, irrep, mu, kappa, "girsanov")


def jacobian_increment(co: OrbitCoefficients, mu: float, kappa: float, dt: float):
    return -0.125 * mu * mu * kappa * co.jac_integrand * dt


def jacobian_boundary(sigma_start, sigma_end):
    return 0.25 * (np.asarray(sigma_end) - np.asarray(sigma_start))


# ---------------------------------------------------------------------------
# accumulation


@dataclass
class MatrixAccumulator:
    """Per-path state of the time-ordered product and the scalar log-weights."""

    Z: np.ndarray                   # (N, r, r) complex
    log_scale: np.ndarray           # renormalisation carried out of Z
    log_jacobian: np.ndarray
    log_potential: np.ndarray
    step: int = 0
    aborted: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def identity(cls, n: int, dim: int):
        Z = np.broadcast_to(np.eye(dim, dtype=complex), (n, dim, dim)).copy()
        z = np.zeros(n)
        return cls(Z=Z, log_scale=z.copy(), log_jacobian=z.copy(), log_potential=z.copy(),
                   aborted=np.zeros(n, bool))

    def value(self):
        return self.Z * np.exp(self.log_scale)[:, None, None]


def step_factor(M, L, dw, dt, scheme: str = "exp"):
    """exp(M dt + sum_c L_c dw_c) (default) or the plain Euler factor."""
    A = M * dt + np.einsum("ncij,nc->nij", L, dw)
    if scheme == "euler":
        return np.eye(A.shape[-1]) + A
    if A.shape[-1] == 1:
        return np.exp(A)
    return expm(A)


def accumulate_step(acc: MatrixAccumulator, M, L, dw, dt, *, jac_inc=None,
                    pot=None, pot_scale=1.0, scheme: str = "exp", active=None,
                    trivial: bool = False):
    """Left-multiply the new factor onto Z and update the log-weights.

    With an ``active`` mask (batched use) a path whose product turns
    non-finite is marked in ``acc.aborted`` and removed from ``active``
    in place; without a mask a non-finite product raises.
    """
    if not trivial:
        F = step_factor(M, L, dw, dt, scheme)
        Znew = F @ acc.Z if F.shape[-1] > 1 else F * acc.Z
        if active is not None:
            Znew = np.where(active[:, None, None], Znew, acc.Z)
        big = np.max(np.abs(Znew), axis=(-1, -2))
        bad = ~np.isfinite(big)
        if np.any(bad):
            if active is None:
                raise AccumulatorOverflowError(acc.step)
            acc.aborted |= bad
            active &= ~bad
            Znew[bad] = acc.Z[bad]
            big[bad] = 1.0
        acc.Z = Znew
        over = big > OVERFLOW
        if np.any(over):
            acc.Z[over] /= big[over, None, None]
            acc.log_scale[over] += np.log(big[over])
    if jac_inc is not None:
        inc = jac_inc if active is None else np.where(active, jac_inc, 0.0)
        acc.log_jacobian += inc
    if pot is not None:
        inc = pot * dt * pot_scale
        acc.log_potential += inc if active is None else np.where(active, inc, 0.0)
    acc.step += 1
    return acc


__all__ = [
    "gamma3", "gamma4", "mprime", "mprime_assembled", "integrand_original",
    "integrand_reduced", "jacobian_increment", "jacobian_boundary",
    "MatrixAccumulator", "accumulate_step", "step_factor", "AccumulatorOverflowError",
]
