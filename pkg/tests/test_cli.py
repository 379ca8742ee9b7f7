import csv
import json
import math

import numpy as np
import pytest

from helmabc.cli import EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main
from helmabc.meshing import import_mesh
from helmabc.pml import mie_disc


def test_pade_output(capsys):
    assert main(["pade", "--M", "1", "--N", "1", "--n-theta", "3"]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "pair: (1,1)"
    assert out[1] == "p: 1, -0.75"
    assert out[2] == "q: 1, -0.25"
    assert out[3] == "m_ord: 3"
    assert out[6].startswith("admissible: yes")
    assert out[7] == "theta_rad,t,alpha_ref"
    rows = [list(map(float, ln.split(","))) for ln in out[8:]]
    assert len(rows) == 3
    np.testing.assert_allclose(rows[2][:2], [math.pi / 3, 0.75], rtol=1e-12)


def test_help_and_version(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "pade" in capsys.readouterr().out
    assert main(["--version"]) == EXIT_OK


def test_usage_errors(capsys):
    assert main(["pade", "--M", "1", "--N", "1", "--bogus", "2"]) == EXIT_USAGE
    assert "error[usage]" in capsys.readouterr().err
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["pade", "--M", "2", "--N", "0"]) == EXIT_USAGE
    assert "inadmissible" in capsys.readouterr().err


def test_config_file(tmp_path, capsys):
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"M": 1, "N": 0, "n-theta": 2}))
    assert main(["pade", "--config", str(good)]) == EXIT_OK
    assert capsys.readouterr().out.startswith("pair: (1,0)")
    # flags override the file
    assert main(["pade", "--config", str(good), "--N", "1"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("pair: (1,1)")
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"Q": 1}))
    assert main(["pade", "--config", str(bad), "--M", "1", "--N", "1"]) == EXIT_USAGE
    assert "unknown config key" in capsys.readouterr().err


def test_missing_input_is_io_error(tmp_path, capsys):
    assert main(["mie", "--k", "5", "--points", str(tmp_path / "nope.txt")]) == EXIT_IO
    assert capsys.readouterr().err.startswith("error[io]:")


def test_mie_points_and_manifest(tmp_path):
    pts = tmp_path / "p.txt"
    pts.write_text("2 0\n0,3\n")
    out = tmp_path / "mie.csv"
    assert main(["mie", "--k", "5", "--points", str(pts), "--out", str(out)]) == EXIT_OK
    with out.open() as fh:
        rows = list(csv.reader(fh))[1:]
    assert len(rows) == 2
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    entry = manifest["runs"]["mie.csv"]
    assert entry["command"] == "mie"
    assert entry["parameters"]["k"] == 5.0
    assert {"numpy", "scipy", "helmabc"} <= set(entry["versions"])
    exact = mie_disc(5.0, 1.0, np.array([1.0, 0.0]), [[2.0, 0.0], [0.0, 3.0]])
    got = np.array([complex(float(r[-2]), float(r[-1])) for r in rows])
    np.testing.assert_allclose(got, exact, rtol=1e-12)


def test_mesh_and_solve_commands(tmp_path, capsys):
    mfile = tmp_path / "m.txt"
    assert main(["mesh", "--scene", "ball:2", "--k", "4", "--C", "1", "--out", str(mfile)]) == EXIT_OK
    assert "min angle" in capsys.readouterr().out
    mesh = import_mesh(mfile.read_text())
    mesh.validate()
    ffile = tmp_path / "f.csv"
    assert main(["solve", "--scene", "ball:2", "--k", "4", "--C", "1", "--abc", "1,1", "--out", str(ffile)]) == EXIT_OK
    with ffile.open() as fh:
        header = next(csv.reader(fh))
    assert header == ["node_id", "x", "y", "re", "im"]
    runs = json.loads((tmp_path / "manifest.json").read_text())["runs"]
    assert set(runs) == {"m.txt", "f.csv"}


def test_bad_scene_is_usage_error(tmp_path, capsys):
    assert main(["mesh", "--scene", "blob:2", "--k", "4", "--out", str(tmp_path / "m.txt")]) == EXIT_USAGE


def test_numerical_failure_exit_code(tmp_path, capsys):
    scene = {
        "obstacle": {"kind": "disc", "params": {"center": [0, 0], "radius": 1.0}},
        "truncation": {"kind": "circle", "R": 1.05},
    }
    sfile = tmp_path / "s.json"
    sfile.write_text(json.dumps(scene))
    code = main(["mesh", "--scene", str(sfile), "--k", "10", "--C", "2", "--out", str(tmp_path / "m.txt")])
    assert code == EXIT_NUMERICAL
    assert capsys.readouterr().err.startswith("error[numerical]:")


@pytest.mark.parametrize("mode", ["direct", "angles"])
def test_rays_command(tmp_path, mode, capsys):
    out = tmp_path / "r.csv"
    assert main(["rays", "--scene", "ball:2", "--n", "50", "--mode", mode, "--out", str(out)]) == EXIT_OK
    assert out.exists()
