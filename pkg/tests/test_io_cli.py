import json
import os

import numpy as np
import pytest
import yaml

from microtopo.cli import RunConfig, load_config, main, run
from microtopo.eps import ConfigError
from microtopo.fem import CellMesh, Grid
from microtopo.io import export_csv, export_vtk, read_csv, read_vtk, write_json

GOLDEN = (
    "# vtk DataFile Version 3.0\ngolden\nASCII\nDATASET STRUCTURED_POINTS\nDIMENSIONS 2 2 1\n"
    "ORIGIN 0 0 0\nSPACING 2.0 0.5 1\nPOINT_DATA 4\nSCALARS phi double 1\nLOOKUP_TABLE default\n"
    "0\n0.25\n1.0\n0.1\nVECTORS u double\n0 0.001 0\n0.5 -2.0 0\n0 0 0\n0.3333333333333333 0 0\n"
)

SMALL = {"nx": 12, "ny": 6, "cell_n": 8, "max_iters": 25, "tol_relative": 1e-2, "n_levels": 9}


def test_vtk_golden_bytes(tmp_path):
    u = np.array([[0, 1e-3], [0.5, -2], [0, 0], [1 / 3, 0]])
    path = export_vtk(tmp_path / "g.vtk", Grid(1, 1, 2.0, 0.5), {"phi": [0, 0.25, 1, 0.1], "u": u}, "golden")
    assert path.read_bytes() == GOLDEN.encode("ascii")
    back = read_vtk(path)
    assert np.array_equal(back["u"], u)
    assert back["phi"].tolist() == [0, 0.25, 1, 0.1]


def test_vtk_periodic_grid_and_bad_shape(tmp_path):
    cell = CellMesh(4)
    f = np.arange(cell.n_nodes, dtype=float)
    text = export_vtk(tmp_path / "c.vtk", cell, {"m": f}).read_text()
    assert f"POINT_DATA {cell.n_nodes}" in text
    with pytest.raises(ValueError):
        export_vtk(tmp_path / "x.vtk", cell, {"m": np.ones(3)})
    with pytest.raises(OSError, match="cannot write"):
        export_vtk(tmp_path / "missing" / "x.vtk", cell, {"m": f})


def test_csv_round_trip(tmp_path):
    rows = [{"t": 0.1, "name": "a,b", "ok": True, "n": 3}, {"t": 1e-300, "name": 'q"x', "ok": False, "n": -1}]
    path = export_csv(rows, tmp_path / "r.csv")
    raw = path.read_bytes()
    assert raw.startswith(b"t,name,ok,n\r\n")
    assert b'"a,b"' in raw and b'"q""x"' in raw
    assert read_csv(path) == rows


def test_json_non_finite(tmp_path):
    p = write_json({"a": np.float64(np.inf), "b": np.arange(2), "c": np.bool_(True)}, tmp_path / "x.json")
    assert json.loads(p.read_text()) == {"a": "inf", "b": [0, 1], "c": True}


def _write(tmp_path, data):
    p = tmp_path / "run.yaml"
    p.write_text(yaml.safe_dump(data))
    return p


def test_config_loading_and_env_override(tmp_path):
    p = _write(tmp_path, {"nx": 10, "traction": [0.0, -2.0]})
    cfg = load_config(p, env={"MICROTOPO_NY": "4", "OTHER": "x"})
    assert (cfg.nx, cfg.ny, cfg.traction) == (10, 4, [0.0, -2.0])
    assert set(RunConfig.keys()) >= {"nx", "volume_cap", "eps_list"}
    for bad in ({"nx": 1.5}, {"nope": 1}, {"volume_cap": 2.0}, {"h1_precondition": "yes"}, {"m_pattern": "stripes"}):
        with pytest.raises(ConfigError):
            load_config(_write(tmp_path, bad), env={})
    with pytest.raises(ConfigError):
        load_config(p, env={"MICROTOPO_BOGUS": "1"})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml", env={})
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "list.yaml", env={})


def test_exit_code_and_manifest_on_config_error(tmp_path):
    p = _write(tmp_path, {"nx": 0})
    code = run("solve", p, tmp_path / "out", env={})
    assert code == 2
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["exit_code"] == 2 and man["status"] == "config error"


def test_not_converged_exit_code(tmp_path):
    p = _write(tmp_path, dict(SMALL, max_iters=1, tol_relative=0.0))
    assert run("optimize", p, tmp_path / "o", env={}) == 4
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["status"] == "not converged"
    assert (tmp_path / "o" / "results.json").exists()


@pytest.mark.parametrize(
    "sub,files",
    [
        ("homogenize", ["cstar.csv", "m.vtk"]),
        ("solve", ["state.vtk"]),
        ("optimize", ["history.csv", "design.vtk", "m.vtk"]),
        ("mm-profile", ["profile.csv"]),
        ("gamma-sweep", ["gamma.csv"]),
    ],
)
def test_subcommands_write_outputs(tmp_path, sub, files):
    extra = {"eps_list": [0.5, 0.25], "lx": 1.0, "ly": 1.0, "nx": 8, "ny": 8} if sub == "gamma-sweep" else {}
    extra.update({"mm_points": 256} if sub == "mm-profile" else {})
    p = _write(tmp_path, dict(SMALL, **extra))
    assert run(sub, p, tmp_path / "o", env={}) == 0
    for f in files + ["manifest.json", "results.json"]:
        assert (tmp_path / "o" / f).exists()


def test_main_entry_point(tmp_path, monkeypatch):
    for k in [k for k in os.environ if k.startswith("MICROTOPO_")]:
        monkeypatch.delenv(k)
    p = _write(tmp_path, dict(SMALL, mm_points=128))
    assert main(["mm-profile", "--config", str(p), "--out", str(tmp_path / "m")]) == 0
    with pytest.raises(SystemExit):
        main(["unknown"])


def test_runs_are_reproducible(tmp_path):
    p = _write(tmp_path, dict(SMALL, m_pattern="random", init_noise=0.05, seed=3))
    run("optimize", p, tmp_path / "a", env={})
    run("optimize", p, tmp_path / "b", env={})
    for f in ("history.csv", "design.vtk", "m.vtk", "results.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    a = json.loads((tmp_path / "a" / "manifest.json").read_text())
    b = json.loads((tmp_path / "b" / "manifest.json").read_text())
    a.pop("timings"), b.pop("timings")
    assert a == b


def test_homogenize_constant_m_rows(tmp_path):
    from microtopo.tensors import Materials

    p = _write(tmp_path, dict(SMALL, m_init=1.7, s_samples=5))
    assert run("homogenize", p, tmp_path / "h", env={}) == 0
    mat = Materials.isotropic()
    for row in read_csv(tmp_path / "h" / "cstar.csv"):
        expect = mat.mixture_voigt(row["s"], 1.7)
        assert row["c1111"] == pytest.approx(expect[0, 0], rel=1e-12)
        assert row["c1122"] == pytest.approx(expect[0, 1], rel=1e-12)
        assert row["c1212"] == pytest.approx(expect[2, 2], rel=1e-12)
        assert abs(row["c1112"]) < 1e-14
