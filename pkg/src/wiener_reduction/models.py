"""Built-in models, irreducible representations and model loading."""
from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Callable

import numpy as np

from . import groups
from .geometry import ModelSpec, join
from .groups import CIRCLE, SU2, IMAG_UNITS, left_matrix, qconj, qexp, qmul


class ModelConfigError(ValueError):
    """Model definition failed schema or invariant validation."""


@dataclass(frozen=True)
class IrrepSpec:
    label: str
    dim: int
    D: Callable                 # group elements (N, elem) -> (N, r, r) complex
    generators: np.ndarray      # (nG, r, r) complex
    value: float = 0.0          # numeric label (lambda or j)

    @property
    def identity(self) -> np.ndarray:
        return np.eye(self.dim, dtype=complex)

    @property
    def trivial(self) -> bool:
        return not np.any(self.generators)


def trivial_irrep(n_G: int) -> IrrepSpec:
    def D(g):
        return np.ones(np.asarray(g).shape[:-1] + (1, 1), dtype=complex)
    return IrrepSpec("trivial", 1, D, np.zeros((n_G, 1, 1), complex), 0.0)


# ---------------------------------------------------------------------------
# circle group acting on the punctured plane


def _rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def so2_irrep(lam: float) -> IrrepSpec:
    lam = float(lam)

    def D(g):
        th = np.asarray(g, float)[..., 0]
        return np.exp(1j * lam * th)[..., None, None]

    label = f"lambda={lam:g}"
    return IrrepSpec(label=label, dim=1, D=D,
                     generators=np.array([[[1j * lam]]]), value=lam)


class So2Closure:
    """Closed-form orbit-space coefficients for the flat rotation model."""

    def __init__(self, coupling: float):
        self.c = coupling

    def sigma_grad(self, y):
        d = np.sum(y * y, axis=-1)
        return np.log(d), 2.0 * y / d[..., None]

    def sigma_hess(self, y):
        d = np.sum(y * y, axis=-1)[..., None, None]
        return 2.0 * np.eye(y.shape[-1]) / d - 4.0 * y[..., :, None] * y[..., None, :] / d ** 2


def _so2_model(coupling=0.0, stretch=0.0, name=None) -> ModelSpec:
    eps = float(stretch)
    c = float(coupling)

    def metric_P(Q):
        Q = np.asarray(Q, float)
        return np.eye(2) + eps * Q[..., :, None] * Q[..., None, :]

    def action(Q, g):
        return np.einsum("...ab,...b->...a", _rot(np.asarray(g, float)[..., 0]), Q)

    def rep(g):
        return _rot(np.asarray(g, float)[..., 0])

    def killing_P(Q):
        Q = np.asarray(Q, float)
        return np.stack([-Q[..., 1], Q[..., 0]], -1)[..., None]

    def gauge(Q):
        return np.asarray(Q, float)[..., 1:2]

    def gauge_grad(Q):
        Q = np.asarray(Q, float)
        out = np.zeros(Q.shape[:-1] + (1, 2))
        out[..., 0, 1] = 1.0
        return out

    def section(x):
        x = np.asarray(x, float)
        return np.concatenate([x, np.zeros_like(x)], -1)

    def section_jac(x):
        x = np.asarray(x, float)
        out = np.zeros(x.shape[:-1] + (2, 1))
        out[..., 0, 0] = 1.0
        return out

    def potential(Q, f):
        return c * (np.sum(np.asarray(Q) ** 2, -1) + np.sum(np.asarray(f) ** 2, -1))

    def solve_gauge(Q):
        Q = np.asarray(Q, float)
        return np.arctan2(Q[..., 1], Q[..., 0])[..., None]

    def sample_x(rng, n):
        return rng.uniform(0.3, 3.0, size=(n, 1))

    params = {"coupling": c, "stretch": eps, "flat_P": eps == 0.0, "radial": True}
    if eps == 0.0:
        params["closure"] = So2Closure(c)
    return ModelSpec(
        name=name or ("so2-planar" if eps == 0.0 else "so2-stretched"),
        n_P=2, n_V=2, n_M=1, group=CIRCLE,
        metric_P=metric_P, metric_V=np.eye(2), action=action, rep=rep,
        rep_generators=np.array([[[0.0, 1.0], [-1.0, 0.0]]]),
        structure_constants=np.zeros((1, 1, 1)),
        killing_P=killing_P, gauge=gauge, gauge_grad=gauge_grad,
        section=section, section_jac=section_jac,
        section_inverse=lambda Qs: np.asarray(Qs, float)[..., :1],
        potential=potential,
        x_domain=lambda x: np.asarray(x)[..., 0] > 0.0,
        q_domain=lambda Q: np.linalg.norm(np.asarray(Q, float), axis=-1) > 1e-12,
        sample_x=sample_x, solve_gauge=solve_gauge, scale=1.0, params=params)


def builtin_so2_planar(coupling: float = 0.0) -> ModelSpec:
    return _so2_model(coupling=coupling)


def so2_stretched(stretch: float = 0.3, coupling: float = 0.0) -> ModelSpec:
    """Rotation model with the invariant non-flat metric I + eps Q Q^T."""
    return _so2_model(coupling=coupling, stretch=stretch)


# ---------------------------------------------------------------------------
# translation model with constant orbit metric


def cylinder() -> ModelSpec:
    """Circle acting by translation of an angular coordinate; V carries the
    trivial representation, so d = 1 everywhere."""

    def action(Q, g):
        Q = np.asarray(Q, float)
        g = np.asarray(g, float)
        return np.concatenate([Q[..., :1], Q[..., 1:2] + g[..., :1]], -1)

    def killing_P(Q):
        Q = np.asarray(Q, float)
        out = np.zeros(Q.shape[:-1] + (2, 1))
        out[..., 1, 0] = 1.0
        return out

    def gauge_grad(Q):
        out = np.zeros(np.asarray(Q).shape[:-1] + (1, 2))
        out[..., 0, 1] = 1.0
        return out

    def section_jac(x):
        out = np.zeros(np.asarray(x).shape[:-1] + (2, 1))
        out[..., 0, 0] = 1.0
        return out

    return ModelSpec(
        name="cylinder", n_P=2, n_V=1, n_M=1, group=CIRCLE,
        metric_P=lambda Q: np.broadcast_to(np.eye(2), np.asarray(Q).shape[:-1] + (2, 2)).copy(),
        metric_V=np.eye(1), action=action,
        rep=lambda g: np.ones(np.asarray(g).shape[:-1] + (1, 1)),
        rep_generators=np.zeros((1, 1, 1)),
        structure_constants=np.zeros((1, 1, 1)),
        killing_P=killing_P,
        gauge=lambda Q: np.asarray(Q, float)[..., 1:2],
        gauge_grad=gauge_grad,
        section=lambda x: np.concatenate([np.asarray(x, float), np.zeros_like(x)], -1),
        section_jac=section_jac,
        section_inverse=lambda Qs: np.asarray(Qs, float)[..., :1],
        potential=lambda Q, f: np.zeros(np.asarray(Q).shape[:-1]),
        x_domain=lambda x: np.ones(np.asarray(x).shape[:-1], bool),
        q_domain=lambda Q: np.ones(np.asarray(Q).shape[:-1], bool),
        sample_x=lambda rng, n: rng.uniform(-2.0, 2.0, size=(n, 1)),
        solve_gauge=lambda Q: np.asarray(Q, float)[..., 1:2],
        scale=1.0, params={"flat_P": True})


# ---------------------------------------------------------------------------
# SU(2) acting on nonzero quaternions by right multiplication


def parse_label(v) -> float:
    """Irrep label as a number; accepts "1/2" style fractions."""
    try:
        return float(Fraction(str(v).strip()))
    except (ValueError, ZeroDivisionError):
        raise ModelConfigError(f"bad irrep label {v!r}") from None


def su2_irrep(j) -> IrrepSpec:
    j = parse_label(j)
    if j == 0.0:
        def D(g):
            return np.ones(np.asarray(g).shape[:-1] + (1, 1), dtype=complex)
        gens = np.zeros((3, 1, 1), dtype=complex)
        dim = 1
    elif j == 0.5:
        sig = np.array([[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]],
                       dtype=complex)

        def D(g):
            g = np.asarray(g, float)
            return (g[..., 0, None, None] * np.eye(2)
                    - 1j * np.einsum("...a,aij->...ij", g[..., 1:], sig))
        gens = -1j * sig
        dim = 2
    elif j == 1.0:
        def D(g):
            g = np.asarray(g, float)
            w, v = g[..., 0], g[..., 1:]
            vv = v[..., :, None] * v[..., None, :]
            R = ((w * w - np.sum(v * v, -1))[..., None, None] * np.eye(3) + 2 * vv
                 + 2 * w[..., None, None] * groups.cross_matrix(v))
            return R.astype(complex)
        gens = np.stack([2.0 * groups.cross_matrix(e) for e in np.eye(3)]).astype(complex)
        dim = 3
    else:
        raise ModelConfigError(f"unsupported SU(2) spin j={j}; use 0, 1/2 or 1")
    return IrrepSpec(label=f"j={j:g}", dim=dim, D=D, generators=gens, value=j)


def builtin_su2(twist: float = 0.5, coupling: float = 0.0) -> ModelSpec:
    """Quaternion model.  The section Q*(x) = x exp(beta x i) is twisted so the
    gamma-connection along the section is nonzero."""
    beta = float(twist)
    c = float(coupling)
    e1 = IMAG_UNITS[0]              # quaternion i
    ax = np.array([1.0, 0.0, 0.0])  # the same direction in exp coordinates

    def action(Q, g):
        return qmul(Q, g)

    def rep(g):
        return left_matrix(g)

    def killing_P(Q):
        Q = np.asarray(Q, float)
        return np.stack([qmul(Q, e) for e in IMAG_UNITS], -1)

    def _E(r):
        return qexp(-beta * r[..., None] * ax)

    def gauge(Q):
        Q = np.asarray(Q, float)
        r = np.linalg.norm(Q, axis=-1)
        return qmul(_E(r), Q)[..., 1:]

    def gauge_grad(Q):
        Q = np.asarray(Q, float)
        r = np.linalg.norm(Q, axis=-1)
        E = _E(r)
        first = left_matrix(E)[..., 1:, :]                      # Im(E e_B)
        dE_Q = qmul(-beta * np.broadcast_to(e1, E.shape), qmul(E, Q))[..., 1:]
        return first + dE_Q[..., :, None] * (Q / r[..., None])[..., None, :]

    def section(x):
        x = np.asarray(x, float)
        return x * qexp(beta * x * ax)

    def section_jac(x):
        x = np.asarray(x, float)
        one_plus = np.concatenate([np.ones_like(x), beta * x, np.zeros_like(x),
                                   np.zeros_like(x)], -1)
        return qmul(one_plus, qexp(beta * x * ax))[..., :, None]

    def solve_gauge(Q):
        Q = np.asarray(Q, float)
        r = np.linalg.norm(Q, axis=-1)
        return qmul(_E(r), Q) / r[..., None]

    def potential(Q, f):
        return c * (np.sum(np.asarray(Q) ** 2, -1) + np.sum(np.asarray(f) ** 2, -1))

    jbar = np.stack([-left_matrix(e) for e in IMAG_UNITS])
    return ModelSpec(
        name="su2", n_P=4, n_V=4, n_M=1, group=SU2,
        metric_P=lambda Q: np.broadcast_to(np.eye(4), np.asarray(Q).shape[:-1] + (4, 4)).copy(),
        metric_V=np.eye(4), action=action, rep=rep, rep_generators=jbar,
        structure_constants=2.0 * groups.LEVI_CIVITA.transpose(2, 0, 1),
        killing_P=killing_P, gauge=gauge, gauge_grad=gauge_grad,
        section=section, section_jac=section_jac,
        section_inverse=lambda Qs: np.linalg.norm(np.asarray(Qs, float), axis=-1)[..., None],
        potential=potential,
        x_domain=lambda x: np.asarray(x)[..., 0] > 0.0,
        q_domain=lambda Q: np.linalg.norm(np.asarray(Q, float), axis=-1) > 1e-12,
        sample_x=lambda rng, n: rng.uniform(0.5, 2.5, size=(n, 1)),
        solve_gauge=solve_gauge, scale=1.0,
        params={"twist": beta, "coupling": c, "flat_P": True, "radial": True})


BUILTINS = {
    "so2-planar": builtin_so2_planar,
    "su2": builtin_su2,
    "so2-stretched": so2_stretched,
    "cylinder": cylinder,
}


def irreps_for(model: ModelSpec, labels) -> list[IrrepSpec]:
    if model.group is SU2:
        return [su2_irrep(v) for v in labels]
    return [so2_irrep(parse_label(v)) for v in labels]


# ---------------------------------------------------------------------------
# invariants


def sample_points(model: ModelSpec, rng, n):
    x = model.sample_x(rng, n)
    ft = rng.normal(0.0, 1.0, size=(n, model.n_V))
    return x, ft


def model_invariants(model: ModelSpec, irreps=(), n: int = 100, seed: int = 7):
    """Run every model/irrep invariant; return list of (name, residual, ok)."""
    rng = np.random.default_rng(seed)
    G = model.group
    out = []
    x, ft = sample_points(model, rng, n)
    Qs = model.section(x)
    g1, g2 = G.random(rng, n), G.random(rng, n)
    Q = model.action(Qs, g1)

    GP = model.metric_P(Q)
    asym = float(np.max(np.abs(GP - np.swapaxes(GP, -1, -2))))
    out.append(("metric_P symmetric", asym, asym < 1e-12))
    mine = float(np.min(np.linalg.eigvalsh(0.5 * (GP + np.swapaxes(GP, -1, -2)))))
    out.append(("metric_P positive definite", mine, mine > 0))
    GV = np.asarray(model.metric_V, float)
    asym = float(np.max(np.abs(GV - GV.T)))
    out.append(("metric_V symmetric", asym, asym < 1e-12))
    mine = float(np.min(np.linalg.eigvalsh(0.5 * (GV + GV.T))))
    out.append(("metric_V positive definite", mine, mine > 0))

    # metric invariance under the action (needed for Killing fields)
    Qg = model.action(Q, g2)
    eps = 1e-6
    jac = np.stack([(model.action(Q + eps * e, g2) - model.action(Q - eps * e, g2)) / (2 * eps)
                    for e in np.eye(model.n_P)], -1)
    pulled = np.swapaxes(jac, -1, -2) @ model.metric_P(Qg) @ jac
    r = float(np.max(np.abs(pulled - GP)))
    out.append(("metric_P invariant", r, r < 1e-6))
    Db = model.rep_bar(g2)
    r = float(np.max(np.abs(np.swapaxes(Db, -1, -2) @ GV @ Db - GV)))
    out.append(("metric_V invariant", r, r < 1e-10))

    r = float(np.max(np.abs(model.rep(G.mul(g1, g2)) - model.rep(g1) @ model.rep(g2))))
    out.append(("representation property", r, r < 1e-10))

    J = model.rep_generators
    c = model.structure_constants
    r = 0.0
    for a in range(model.n_G):
        for b in range(model.n_G):
            comm = J[a] @ J[b] - J[b] @ J[a]
            r = max(r, float(np.max(np.abs(comm - np.einsum("g,gij->ij", -c[:, a, b], J)))))
    out.append(("generator commutators", r, r < 1e-12))

    r = float(np.max(np.abs(model.gauge(Qs))))
    out.append(("gauge consistency", r, r < 1e-12))

    f = rng.normal(size=(n, model.n_V))
    V0 = model.potential(Q, f)
    V1 = model.potential(model.action(Q, g2), np.einsum("nab,nb->na", Db, f))
    r = float(np.max(np.abs(V1 - V0)))
    out.append(("potential invariance", r, r < 1e-10))

    for ir in irreps:
        Dg = ir.D(g1)
        r = float(np.max(np.abs(np.conj(np.swapaxes(Dg, -1, -2)) @ Dg - ir.identity)))
        out.append((f"irrep {ir.label} unitary", r, r < 1e-10))
        r = float(np.max(np.abs(ir.D(G.mul(g1, g2)) - Dg @ ir.D(g2))))
        out.append((f"irrep {ir.label} homomorphism", r, r < 1e-10))
        Jl = ir.generators
        r = 0.0
        for a in range(model.n_G):
            for b in range(model.n_G):
                comm = Jl[a] @ Jl[b] - Jl[b] @ Jl[a]
                r = max(r, float(np.max(np.abs(comm - np.einsum("g,gij->ij", c[:, a, b], Jl)))))
        out.append((f"irrep {ir.label} commutators", r, r < 1e-12))
        # generators are the derivative of D at the identity
        h = 1e-6
        r = 0.0
        for a in range(model.n_G):
            e = np.zeros((1, model.n_G))
            e[0, a] = h
            dD = (ir.D(G.exp(e)) - ir.D(G.exp(-e)))[0] / (2 * h)
            r = max(r, float(np.max(np.abs(dD - Jl[a]))))
        out.append((f"irrep {ir.label} generator derivative", r, r < 1e-7))
    return out


# ---------------------------------------------------------------------------
# loading


SCHEMA_VERSION = 1


def _inline_overrides(model: ModelSpec, section: dict) -> ModelSpec:
    """Apply inline numeric overrides (currently: metric_V)."""
    if "metric_V" in section:
        GV = np.asarray(section["metric_V"], float)
        if GV.shape != (model.n_V, model.n_V):
            raise ModelConfigError(
                f"model.metric_V: expected shape {(model.n_V, model.n_V)}, got {GV.shape}")
        model = replace(model, metric_V=GV)
    return model


def load_model(cfg: dict):
    """Build (ModelSpec, [IrrepSpec]) from a parsed ``[model]`` table and run
    the invariant suite; any failing invariant raises ModelConfigError naming
    the check."""
    if not isinstance(cfg, dict):
        raise ModelConfigError("model: expected a table")
    mid = cfg.get("id", "so2-planar")
    if mid not in BUILTINS:
        raise ModelConfigError(f"model.id: unknown built-in model {mid!r}")
    kwargs = {}
    for key in ("coupling", "stretch", "twist"):
        if key in cfg:
            try:
                kwargs[key] = float(cfg[key])
            except (TypeError, ValueError):
                raise ModelConfigError(f"model.{key}: expected a number") from None
    if mid == "cylinder" and kwargs:
        raise ModelConfigError("model: the cylinder model has no parameters")
    if kwargs.get("coupling", 0.0) < 0:
        raise ModelConfigError("model.coupling: must be >= 0")
    try:
        model = BUILTINS[mid](**kwargs)
    except TypeError as exc:
        raise ModelConfigError(f"model: {exc}") from None
    model = _inline_overrides(model, cfg)
    labels = cfg.get("irreps", [0.0, 1.0] if model.group is CIRCLE else [0.0, 0.5])
    try:
        irreps = irreps_for(model, labels)
    except (TypeError, ValueError) as exc:
        raise ModelConfigError(f"model.irreps: {exc}") from None
    failed = [(nm, r) for nm, r, ok in model_invariants(model, irreps) if not ok]
    if failed:
        nm, r = failed[0]
        raise ModelConfigError(f"model invariant failed: {nm} (residual {r:.3g})")
    return model, irreps


__all__ = [
    "IrrepSpec", "ModelConfigError", "builtin_so2_planar", "builtin_su2",
    "so2_stretched", "cylinder", "so2_irrep", "su2_irrep", "load_model",
    "model_invariants", "irreps_for", "join", "qconj",
]
