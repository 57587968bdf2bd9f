"""Command-line driver: configuration, orchestration and report output.

Configuration is TOML::

    schema = 1
    output_dir = "out"          # optional

    [model]
    id = "so2-planar"           # so2-planar | su2 | so2-stretched | cylinder
    coupling = 0.0
    irreps = [0, 1]
    # metric_V = [[1, 0], [0, 1]]

    [run]
    mu = 1.0
    kappa = 1.0
    m = 1.0
    t_a = 0.0
    t_b = 0.25
    dt = 1e-3
    n_paths = 200000
    seed = 20240611
    workers = 1
    x_min = 0.05

    [start]
    points = [[1.5, 0.5, 0.0]]

    [test]
    center = [1.6, 0.4, 0.1]
    width = 0.5

    [girsanov]
    couplings = [0.0, 0.1]      # optional sweep; defaults to the model value

    [generator]
    dts = [1e-3, 5e-4]
    modes = ["original", "girsanov"]

    [simulate]
    mode = "girsanov"           # total | original | girsanov
    n_paths = 3
    steps = 10

Command-line flags override the file.  Exit codes: 0 pass, 1 check failure,
2 configuration error, 3 inconclusive.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from . import checks, greens, plotting
from . import geometry as geo
from .models import SCHEMA_VERSION, ModelConfigError, load_model
from .sde import ParamError, RunParams, simulate_reduced_block, simulate_total_block

OUT_ENV = "WIENER_REDUCTION_OUT"

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_INCONCLUSIVE = 0, 1, 2, 3

_SECTIONS = {
    "schema": None, "output_dir": None, "model": None,
    "run": {"mu", "kappa", "m", "t_a", "t_b", "dt", "n_paths", "seed", "workers", "x_min",
            "analytic", "scheme"},
    "start": {"points"},
    "test": {"center", "width"},
    "girsanov": {"couplings"},
    "generator": {"dts", "modes"},
    "simulate": {"mode", "n_paths", "steps"},
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class RunConfig:
    raw: dict
    model_section: dict
    params: RunParams
    starts: list
    test_center: list | None
    test_width: float
    workers: int = 1
    seed: int = RunParams.master_seed
    output_dir: Path = Path("out")
    analytic: bool = True
    scheme: str = "exp"
    sections: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        """The full effective configuration, for embedding in reports."""
        run = asdict(self.params)
        run["seed"] = run.pop("master_seed")
        run.update(workers=self.workers, analytic=self.analytic, scheme=self.scheme)
        out = {k: v for k, v in self.raw.items() if k not in ("run", "output_dir")}
        out.update(schema=SCHEMA_VERSION, run=run, model=self.model_section,
                   start={"points": self.starts},
                   test={"center": self.test_center, "width": self.test_width})
        return out


def _num(sec, key, value, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{sec}.{key}: expected a number, got {value!r}")
    if kind is int:
        if float(value) != int(value):
            raise ConfigError(f"{sec}.{key}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _default_start(model_id):
    return {"su2": [1.5, 0.3, 0.2, 0.5, 0.1], "cylinder": [0.3, 0.5]}.get(model_id,
                                                                         [1.5, 0.5, 0.0])


def parse_config(raw: dict, overrides: dict | None = None) -> RunConfig:
    overrides = overrides or {}
    if "schema" not in raw:
        raise ConfigError("schema: missing (expected schema = 1)")
    if raw["schema"] != SCHEMA_VERSION:
        raise ConfigError(f"schema: unsupported version {raw['schema']!r}, expected {SCHEMA_VERSION}")
    for key, val in raw.items():
        if key not in _SECTIONS:
            raise ConfigError(f"{key}: unknown section")
        allowed = _SECTIONS[key]
        if allowed is not None:
            if not isinstance(val, dict):
                raise ConfigError(f"{key}: expected a table")
            for sub in val:
                if sub not in allowed:
                    raise ConfigError(f"{key}.{sub}: unknown field")
    run = dict(raw.get("run", {}))
    kw = {}
    for k in ("mu", "kappa", "m", "t_a", "t_b", "dt", "x_min"):
        if k in run:
            kw[k] = _num("run", k, run[k])
    if "n_paths" in run:
        kw["n_paths"] = _num("run", "n_paths", run["n_paths"], int)
    seed = _num("run", "seed", run["seed"], int) if "seed" in run else RunParams.master_seed
    workers = _num("run", "workers", run["workers"], int) if "workers" in run else 1
    if overrides.get("seed") is not None:
        seed = overrides["seed"]
    if overrides.get("workers") is not None:
        workers = overrides["workers"]
    if overrides.get("dt") is not None:
        kw["dt"] = overrides["dt"]
    if overrides.get("paths") is not None:
        kw["n_paths"] = overrides["paths"]
    if workers < 1:
        raise ConfigError("run.workers: must be >= 1")
    if seed < 0:
        raise ConfigError("run.seed: must be non-negative")
    try:
        params = RunParams(master_seed=seed, **kw)
    except ParamError as exc:
        raise ConfigError(f"run: {exc}") from None
    model_section = dict(raw.get("model", {"id": "so2-planar"}))
    if not isinstance(model_section, dict):
        raise ConfigError("model: expected a table")
    mid = model_section.get("id", "so2-planar")
    starts = raw.get("start", {}).get("points", [_default_start(mid)])
    if (not isinstance(starts, list) or not starts
            or not all(isinstance(p, list) for p in starts)):
        raise ConfigError("start.points: expected a list of coordinate lists")
    starts = [[_num("start", "points", v) for v in p] for p in starts]
    test = raw.get("test", {})
    center = test.get("center")
    if center is not None:
        center = [_num("test", "center", v) for v in center]
    width = _num("test", "width", test.get("width", 0.5))
    if width <= 0:
        raise ConfigError("test.width: must be positive")
    analytic = run.get("analytic", True)
    if not isinstance(analytic, bool):
        raise ConfigError("run.analytic: expected true or false")
    scheme = run.get("scheme", "exp")
    if scheme not in ("exp", "euler"):
        raise ConfigError("run.scheme: expected 'exp' or 'euler'")
    out = overrides.get("out") or raw.get("output_dir") or os.environ.get(OUT_ENV) or "out"
    return RunConfig(raw=raw, model_section=model_section, params=params, starts=starts,
                     test_center=center, test_width=width, workers=workers, seed=seed,
                     output_dir=Path(out), analytic=analytic, scheme=scheme,
                     sections={k: raw.get(k, {}) for k in ("girsanov", "generator", "simulate")})


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    if path is None:
        raw = {"schema": SCHEMA_VERSION}
    else:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: invalid TOML ({exc})") from None
    return parse_config(raw, overrides)


# ---------------------------------------------------------------------------
# output


def versions() -> dict:
    return {"wiener_reduction": __version__, "numpy": np.__version__,
            "scipy": scipy.__version__, "python": platform.python_version()}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path: Path, data: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_jsonable(data), sort_keys=True, indent=2, ensure_ascii=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _report(cmd: str, cfg: RunConfig, results, verdict: str) -> dict:
    return {"command": cmd, "config": cfg.resolved(), "seed": cfg.seed,
            "versions": versions(), "results": results, "verdict": verdict}


def _combine(verdicts) -> str:
    verdicts = list(verdicts)
    if any(v == "fail" for v in verdicts):
        return "fail"
    if any(v == "inconclusive" for v in verdicts):
        return "inconclusive"
    return "pass"


_EXIT = {"pass": EXIT_PASS, "fail": EXIT_FAIL, "inconclusive": EXIT_INCONCLUSIVE}


def _label(ir):
    return ir.label.replace("=", "").replace("/", "_").replace(".", "p")


def _test_function(cfg: RunConfig, start):
    center = cfg.test_center if cfg.test_center is not None else list(start)
    if len(center) != len(start):
        raise ConfigError(f"test.center: expected {len(start)} coordinates")
    return greens.TestFunction(tuple(center), cfg.test_width)


def _check_starts(cfg, model):
    for i, p in enumerate(cfg.starts):
        if len(p) != model.n_R:
            raise ConfigError(f"start.points[{i}]: expected {model.n_R} coordinates, got {len(p)}")
        x, _ = geo.split(model, np.asarray([p]))
        if not bool(model.x_domain(x)[0]):
            raise ConfigError(f"start.points[{i}]: outside the model domain")


# ---------------------------------------------------------------------------
# commands


def cmd_check_geometry(cfg: RunConfig) -> int:
    model, irreps = load_model(cfg.model_section)
    rows = checks.geometry_report(model, irreps)
    verdict = "pass" if all(r["ok"] for r in rows) else "fail"
    out = cfg.output_dir
    write_json(out / "check_geometry.json",
               _report("check-geometry", cfg, {"model": model.name, "identities": rows}, verdict))
    plotting.plot_residuals(rows, out / "check_geometry.png", title=model.name)
    return _EXIT[verdict]


def cmd_girsanov(cfg: RunConfig) -> int:
    model_cfg = dict(cfg.model_section)
    couplings = cfg.sections["girsanov"].get("couplings", [model_cfg.get("coupling", 0.0)])
    results, rows = [], []
    for c in couplings:
        mc = dict(model_cfg)
        if model_cfg.get("id", "so2-planar") != "cylinder":
            mc["coupling"] = _num("girsanov", "couplings", c)
        model, irreps = load_model(mc)
        _check_starts(cfg, model)
        for start in cfg.starts:
            test = _test_function(cfg, start)
            for ir in irreps:
                r = greens.girsanov_consistency(model, test, ir, start, cfg.params,
                                                cfg.workers, cfg.analytic, cfg.scheme)
                r.update(coupling=c, irrep=ir.label, start=start)
                results.append(r)
                rows.append({"label": f"c={c:g} {ir.label}",
                             "a": r["original"]["value_re"][0][0],
                             "a_se": r["original"]["stderr"][0][0],
                             "b": r["girsanov"]["value_re"][0][0],
                             "b_se": r["girsanov"]["stderr"][0][0],
                             "a_name": "original", "b_name": "girsanov"})
    verdict = _combine(r["verdict"] for r in results)
    out = cfg.output_dir
    write_json(out / "girsanov.json", _report("girsanov", cfg, results, verdict))
    write_csv(out / "girsanov.csv",
              ["coupling", "irrep", "start", "original_re", "original_im", "original_se",
               "girsanov_re", "girsanov_im", "girsanov_se", "z", "exit_fraction"],
              [[r["coupling"], r["irrep"], " ".join(format(v, ".17g") for v in r["start"]),
                r["original"]["value_re"][0][0], r["original"]["value_im"][0][0],
                r["original"]["stderr"][0][0], r["girsanov"]["value_re"][0][0],
                r["girsanov"]["value_im"][0][0], r["girsanov"]["stderr"][0][0],
                r["max_abs_z"], r["exit_fraction"]] for r in results])
    plotting.plot_estimates(rows, out / "girsanov.png", title="original vs transformed")
    return _EXIT[verdict]


def cmd_relation(cfg: RunConfig) -> int:
    if cfg.params.n_steps == 0:
        raise ConfigError("run.t_b: degenerate configuration, t_b equals t_a")
    model, irreps = load_model(cfg.model_section)
    _check_starts(cfg, model)
    out = cfg.output_dir
    results, rows = [], []
    for k, start in enumerate(cfg.starts):
        test = _test_function(cfg, start)
        for ir in irreps:
            r = greens.relation_check(model, test, ir, start, cfg.params, cfg.workers,
                                      cfg.analytic, keep_weights=True, scheme=cfg.scheme)
            wts = r.pop("_weights")
            r.update(irrep=ir.label, start=start)
            name = f"relation_weights_{k}_{_label(ir)}.csv"
            lw, rw = wts["lhs"], wts["rhs"]
            write_csv(out / name, ["path", "lhs_weight", "lhs_alive", "rhs_weight", "rhs_alive"],
                      zip(range(len(lw["weights"])), lw["weights"], lw["alive"],
                          rw["weights"], rw["alive"]))
            plotting.plot_weights(lw["weights"][lw["alive"]], out / name.replace(".csv", ".png"),
                                  title=f"reduced-side weights {ir.label}")
            r["weights_csv"] = name
            results.append(r)
            row = {"label": ir.label, "a": r["lhs"]["value_re"][0][0],
                   "a_se": r["lhs"]["stderr"][0][0], "b": r["rhs"]["value_re"][0][0],
                   "b_se": r["rhs"]["stderr"][0][0], "a_name": "reduced", "b_name": "total"}
            if "oracle" in r:
                row["oracle"] = r["oracle"]["value_re"]
            rows.append(row)
    verdict = _combine(r["verdict"] for r in results)
    write_json(out / "relation.json", _report("relation", cfg, results, verdict))
    plotting.plot_estimates(rows, out / "relation.png", title="reduced vs total space")
    return _EXIT[verdict]


def cmd_generator_check(cfg: RunConfig) -> int:
    model, irreps = load_model(cfg.model_section)
    _check_starts(cfg, model)
    sec = cfg.sections["generator"]
    dts = tuple(_num("generator", "dts", v) for v in sec.get("dts", [1e-3, 5e-4]))
    if len(dts) != 2 or not dts[1] < dts[0]:
        raise ConfigError("generator.dts: expected two decreasing step sizes")
    modes = sec.get("modes", ["original", "girsanov"])
    for mo in modes:
        if mo not in ("original", "girsanov"):
            raise ConfigError(f"generator.modes: unknown mode {mo!r}")
    results = []
    for start in cfg.starts:
        center = cfg.test_center if cfg.test_center is not None else start
        for ti, test in enumerate(greens.scalar_suite(center, cfg.test_width)):
            for ir in irreps:
                for mo in modes:
                    r = greens.generator_fd_check(model, ir, test, start, cfg.params, mo, dts,
                                                  cfg.analytic, cfg.scheme)
                    r["test_function"] = ti
                    results.append(r)
    verdict = "pass" if all(r["pass"] for r in results) else "fail"
    out = cfg.output_dir
    write_json(out / "generator_check.json", _report("generator-check", cfg, results, verdict))
    write_csv(out / "generator_check.csv",
              ["model", "irrep", "mode", "test_function", "dt", "error"],
              [[r["model"], r["irrep"], r["mode"], r["test_function"], dt, e]
               for r in results for dt, e in zip(r["dts"], r["errors"])])
    plotting.plot_generator_errors(results, out / "generator_check.png")
    return _EXIT[verdict]


def cmd_simulate(cfg: RunConfig) -> int:
    model, irreps = load_model(cfg.model_section)
    _check_starts(cfg, model)
    sec = cfg.sections["simulate"]
    mode = sec.get("mode", "girsanov")
    if mode not in ("total", "original", "girsanov"):
        raise ConfigError(f"simulate.mode: unknown mode {mode!r}")
    n_paths = _num("simulate", "n_paths", sec.get("n_paths", 3), int)
    p = cfg.params
    if "steps" in sec:
        steps = _num("simulate", "steps", sec["steps"], int)
        if steps < 0:
            raise ConfigError("simulate.steps: must be >= 0")
        p = p.with_(t_b=p.t_a + steps * p.dt)
    p = p.with_(n_paths=n_paths)
    start = np.asarray(cfg.starts[0], float)
    ir = irreps[-1]
    seed = cfg.seed
    if mode == "total":
        x, ft = geo.split(model, start[None])
        Q, f = geo.from_adapted(model, x, ft, model.group.identity[None])
        blk = simulate_total_block(model, p, np.concatenate([Q[0], f[0]]), seed, 0, n_paths,
                                   record=True)
        traj = blk.trajectory
        ztraj = None
        names = [f"Q{i}" for i in range(model.n_P)] + [f"f{i}" for i in range(model.n_V)]
    else:
        blk = simulate_reduced_block(model, ir, p, start, mode, seed, 0, n_paths, record=True,
                                     scheme=cfg.scheme, analytic=cfg.analytic)
        traj, ztraj = blk.trajectory, blk.z_trajectory
        names = [f"x{i}" for i in range(model.n_M)] + [f"ft{i}" for i in range(model.n_V)]
    r = ir.dim
    znames = [f"Z{i}{j}_{part}" for i in range(r) for j in range(r) for part in ("re", "im")]
    header = ["path", "step", "t"] + names + znames
    times = p.t_a + p.dt * np.arange(traj.shape[0])
    rows = []
    for k in range(n_paths):
        for s in range(traj.shape[0]):
            if ztraj is None:
                zvals = [1.0, 0.0] if r == 1 else [float(i == j) for i in range(r)
                                                   for j in range(r) for _ in (0, 1)]
            else:
                z = ztraj[s, k]
                zvals = [v for i in range(r) for j in range(r)
                         for v in (z[i, j].real, z[i, j].imag)]
            rows.append([k, s, float(times[s])] + [float(v) for v in traj[s, k]] + zvals)
    out = cfg.output_dir
    write_csv(out / "trajectories.csv", header, rows)
    drift = {"total": "total-space Laplace-Beltrami",
             "original": "b_tilde + Hinv grad(sigma)/2",
             "girsanov": "b_tilde (intrinsic Laplace-Beltrami)"}[mode]
    write_json(out / "trajectories.json",
               _report("simulate", cfg, {"mode": mode, "drift": drift, "irrep": ir.label,
                                         "n_paths": n_paths, "n_steps": p.n_steps,
                                         "alive": blk.alive}, "pass"))
    if traj.shape[0] > 1:
        plotting.plot_trajectories(times, traj, out / "trajectories.png", labels=names,
                                   title=f"{model.name} ({mode})")
    return EXIT_PASS


COMMANDS = {
    "check-geometry": cmd_check_geometry,
    "girsanov": cmd_girsanov,
    "relation": cmd_relation,
    "generator-check": cmd_generator_check,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wiener-reduction",
                                 description="Reduction of Wiener path integrals: checks and simulations.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out", metavar="DIR",
                        help=f"output directory (default: ${OUT_ENV} or ./out)")
        sp.add_argument("--dt", type=float)
        sp.add_argument("--paths", type=int)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "workers": args.workers, "out": args.out,
                 "dt": args.dt, "paths": args.paths}
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except (ConfigError, ModelConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
