"""Deterministic residual checks on the geometry and the holonomy coefficients,
plus the pathwise check of the Jacobian exponent."""
from __future__ import annotations

import numpy as np

from . import geometry as geo
from . import holonomy as hol
from .fields import orbit_coefficients
from .models import IrrepSpec, model_invariants, sample_points, trivial_irrep
from .sde import RunParams, simulate_reduced_block

INVERSE_TOL = 1e-9
DET_TOL = 1e-8
ALGEBRA_TOL = 1e-10
GLL_TOL = 1e-9
MPRIME_TOL = 1e-8


def _points(model, n, seed):
    rng = np.random.default_rng(seed)
    x, ft = sample_points(model, rng, n)
    a = model.group.log(model.group.random(rng, n))
    return x, ft, a


def metric_identities(model, n: int = 200, seed: int = 11):
    """Inverse-metric and determinant-factorization residuals at random points."""
    x, ft, a = _points(model, n, seed)
    fr = geo.make_frame(model, x, ft)
    G = geo.assemble_adapted_metric(model, fr, a)
    Gi = geo.assemble_inverse_metric(model, fr, a)
    inv_res = float(np.max(np.abs(Gi @ G - np.eye(G.shape[-1]))))
    full, det_d, det_u, H = geo.determinant_factorization(model, fr, a, check=False)
    det_res = float(np.max(np.abs(full - det_d * det_u * H) / np.abs(full)))
    return [
        ("inverse metric", inv_res, INVERSE_TOL),
        ("determinant factorization", det_res, DET_TOL),
    ]


def algebraic_identities(model, n: int = 200, seed: int = 11):
    x, ft, _ = _points(model, n, seed)
    fr = geo.make_frame(model, x, ft)
    r1 = np.max(np.abs(fr.dmat_inv @ fr.gamma_prime @ fr.gamma_inv + fr.dmat_inv
                       - fr.gamma_inv))
    A = fr.conn_gamma
    r2 = np.max(np.abs(fr.GLL - (fr.gamma_inv + A @ fr.h_inv @ np.swapaxes(A, -1, -2))))
    return [
        ("d^-1 gamma' gamma^-1 + d^-1 = gamma^-1", float(r1), ALGEBRA_TOL),
        ("G Lambda Lambda = gamma^-1 + h A A", float(r2), GLL_TOL),
    ]


def mprime_identity(model, irreps, n: int = 50, seed: int = 13):
    """Closed-form M' against the generator-matching assembly."""
    x, ft, _ = _points(model, n, seed)
    y = geo.join(x, ft)
    fr = geo.make_frame(model, x, ft)
    co = orbit_coefficients(model, y, analytic=False)
    out = []
    for ir in irreps:
        r = np.max(np.abs(hol.mprime(co, ir) - hol.mprime_assembled(model, fr, co, ir)))
        out.append((f"M' closed form vs assembly ({ir.label})", float(r), MPRIME_TOL))
    return out


def geometry_report(model, irreps, n: int = 200, seed: int = 11):
    """Every identity with its max residual and verdict."""
    rows = []
    for name, r, ok in model_invariants(model, irreps):
        rows.append({"identity": name, "residual": float(r), "ok": bool(ok)})
    for name, r, tol in (metric_identities(model, n, seed) + algebraic_identities(model, n, seed)
                         + mprime_identity(model, irreps, min(n, 50), seed + 2)):
        rows.append({"identity": name, "residual": r, "tolerance": tol, "ok": bool(r < tol)})
    return rows


# ---------------------------------------------------------------------------
# dynamic checks


def zero_momentum(model, params: RunParams, y0, n_paths: int = 64, seed: int = 5):
    """With the trivial irrep the accumulated product must stay exactly I."""
    ir = trivial_irrep(model.n_G)
    p = params.with_(n_paths=n_paths)
    blk = simulate_reduced_block(model, ir, p, y0, "girsanov", seed, 0, n_paths)
    return bool(np.all(blk.Z == 1.0))


def ito_identity(model, params: RunParams, y0, n_paths: int = 10_000, seed: int = 3,
                 irrep: IrrepSpec | None = None):
    """Pathwise comparison of the Jacobian written as a drift integral plus
    boundary term with its stochastic-integral form.

    Returns mean |log difference| for the plain Ito sum and for the sum with
    the second-order (Milstein) correction."""
    ir = irrep or trivial_irrep(model.n_G)
    p = params.with_(n_paths=n_paths)
    blk = simulate_reduced_block(model, ir, p, y0, "girsanov", seed, 0, n_paths,
                                 ito_check=True)
    lhs = blk.log_jacobian + hol.jacobian_boundary(blk.sigma_start, blk.sigma_end)
    a = blk.alive
    return {
        "plain": float(np.mean(np.abs(lhs - blk.extra["ito_plain"])[a])),
        "milstein": float(np.mean(np.abs(lhs - blk.extra["ito_milstein"])[a])),
        "alive_fraction": float(np.mean(a)),
    }
