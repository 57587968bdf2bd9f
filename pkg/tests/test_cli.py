import csv
import json

import pytest

from wiener_reduction import cli


def run(tmp_path, args, config=None):
    argv = list(args)
    if config is not None:
        p = tmp_path / "cfg.toml"
        p.write_text(config)
        argv += ["--config", str(p)]
    return cli.main(argv)


def test_simulate_row_count_and_bytes(tmp_path):
    cfg = 'schema = 1\n[model]\nid = "so2-planar"\nirreps = [1]\n[simulate]\nn_paths = 3\nsteps = 10\n'
    assert run(tmp_path, ["simulate", "--out", str(tmp_path / "a")], cfg) == 0
    assert run(tmp_path, ["simulate", "--out", str(tmp_path / "b")], cfg) == 0
    a = (tmp_path / "a" / "trajectories.csv").read_bytes()
    assert a == (tmp_path / "b" / "trajectories.csv").read_bytes()
    rows = list(csv.reader(a.decode().splitlines()))
    assert len(rows) == 34 and rows[0][:3] == ["path", "step", "t"]
    assert (tmp_path / "a" / "trajectories.png").exists()


def test_simulate_modes_share_columns(tmp_path):
    heads = {}
    for mode in ("original", "girsanov"):
        cfg = f'schema = 1\n[simulate]\nmode = "{mode}"\nsteps = 2\n'
        out = tmp_path / mode
        assert run(tmp_path, ["simulate", "--out", str(out)], cfg) == 0
        heads[mode] = (out / "trajectories.csv").read_text().splitlines()[0]
        meta = json.loads((out / "trajectories.json").read_text())
        assert meta["results"]["mode"] == mode
    assert heads["original"] == heads["girsanov"]


def test_csv_precision(tmp_path):
    cfg = 'schema = 1\n[simulate]\nsteps = 1\nn_paths = 1\n'
    run(tmp_path, ["simulate", "--out", str(tmp_path)], cfg)
    line = (tmp_path / "trajectories.csv").read_text().splitlines()[2]
    assert float(line.split(",")[3]) == float(format(float(line.split(",")[3]), ".17g"))


def test_girsanov_underpowered_is_inconclusive(tmp_path):
    assert run(tmp_path, ["girsanov", "--paths", "10", "--out", str(tmp_path)]) == 3
    rep = json.loads((tmp_path / "girsanov.json").read_text(encoding="utf-8"))
    assert rep["verdict"] == "inconclusive"
    assert set(rep) >= {"config", "seed", "versions"}


def test_girsanov_reports_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert run(tmp_path, ["girsanov", "--paths", "3000", "--seed", "5",
                              "--out", str(tmp_path / d)]) in (0, 3)
    for f in ("girsanov.json", "girsanov.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_json_sorted_keys(tmp_path):
    run(tmp_path, ["check-geometry", "--out", str(tmp_path)])
    text = (tmp_path / "check_geometry.json").read_text(encoding="utf-8")
    data = json.loads(text)
    assert text == json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def test_check_geometry_passes(tmp_path):
    assert run(tmp_path, ["check-geometry", "--out", str(tmp_path)]) == 0
    cfg = 'schema = 1\n[model]\nid = "su2"\n'
    assert run(tmp_path, ["check-geometry", "--out", str(tmp_path / "s")], cfg) == 0
    rep = json.loads((tmp_path / "s" / "check_geometry.json").read_text())
    det = [r for r in rep["results"]["identities"] if r["identity"] == "determinant factorization"]
    assert det[0]["residual"] < 1e-8


def test_nonsymmetric_metric_exit_2(tmp_path, capsys):
    cfg = 'schema = 1\n[model]\nid = "so2-planar"\nmetric_V = [[1.0, 0.2], [0.0, 1.0]]\n'
    assert run(tmp_path, ["check-geometry", "--out", str(tmp_path)], cfg) == 2
    assert "symmetric" in capsys.readouterr().err


def test_degenerate_relation_exit_2(tmp_path, capsys):
    cfg = "schema = 1\n[run]\nt_a = 0.1\nt_b = 0.1\n"
    assert run(tmp_path, ["relation", "--out", str(tmp_path)], cfg) == 2
    assert "degenerate" in capsys.readouterr().err


@pytest.mark.parametrize("cfg,field", [
    ("[run]\nmu = 1\n", "schema"),
    ("schema = 2\n", "schema"),
    ("schema = 1\n[run]\nbogus = 1\n", "run.bogus"),
    ("schema = 1\n[run]\nn_paths = 'many'\n", "run.n_paths"),
    ("schema = 1\n[start]\npoints = [[1.0, 0.0]]\n", "start.points[0]"),
    ("schema = 1\n[run]\nworkers = 0\n", "run.workers"),
])
def test_config_errors_name_field(tmp_path, capsys, cfg, field):
    assert run(tmp_path, ["girsanov", "--out", str(tmp_path)], cfg) == 2
    assert field in capsys.readouterr().err


def test_flags_override_config(tmp_path):
    cfg = "schema = 1\n[run]\ndt = 0.01\nn_paths = 5\nseed = 1\n"
    p = tmp_path / "c.toml"
    p.write_text(cfg)
    rc = cli.load_config(str(p), {"dt": 0.005, "paths": 7, "seed": 3, "workers": 2,
                                  "out": str(tmp_path)})
    assert rc.params.dt == 0.005 and rc.params.n_paths == 7
    assert rc.seed == 3 and rc.params.master_seed == 3 and rc.workers == 2


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "envout"))
    rc = cli.load_config(None, {})
    assert str(rc.output_dir) == str(tmp_path / "envout")


def test_relation_emits_weights(tmp_path):
    assert run(tmp_path, ["relation", "--paths", "2000", "--out", str(tmp_path)]) in (0, 3)
    rep = json.loads((tmp_path / "relation.json").read_text())
    for r in rep["results"]:
        rows = (tmp_path / r["weights_csv"]).read_text().splitlines()
        assert rows[0] == "path,lhs_weight,lhs_alive,rhs_weight,rhs_alive"
        assert len(rows) == 2001
    assert (tmp_path / "relation.png").exists()


def test_generator_check_cli(tmp_path):
    assert run(tmp_path, ["generator-check", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "generator_check.csv").exists()
