import json

import pytest

from epgflow.cli import EXIT_CONFIG, EXIT_OK, EXIT_VALIDATION, main
from epgflow.io import sha256_file, write_mesh
from epgflow.mesh import build_structured_mesh, unit_square


def run(tmp_path, name, *args):
    out = tmp_path / name
    return main(list(args) + ["--out", str(out)]), out


def test_darcy_outputs_and_manifest(tmp_path):
    code, out = run(tmp_path, "d", "darcy", "--preset", "example2", "--k", "2", "--dump-matrix")
    assert code == EXIT_OK
    doc = json.loads((out / "manifest.json").read_text())
    assert set(doc["files"]) == {"darcy_epg_P2.vtk", "matrix_cg_P2.coo", "matrix_bubble_P2.coo", "summary.txt"}
    for name, digest in doc["files"].items():
        assert sha256_file(out / name) == digest
    assert doc["config"]["domain"] == "ten_shape"


def test_reruns_byte_identical(tmp_path):
    args = ["transport", "--preset", "example3", "--k", "1", "--steps", "10", "--vtk-stride", "5"]
    run(tmp_path, "a", *args)
    run(tmp_path, "b", *args)
    da = json.loads((tmp_path / "a" / "manifest.json").read_text())["files"]
    db = json.loads((tmp_path / "b" / "manifest.json").read_text())["files"]
    assert da == db and len(da) == 5


def test_bad_configuration_exit_codes(tmp_path, capsys):
    assert run(tmp_path, "x", "darcy", "--k", "4")[0] == EXIT_CONFIG
    cfg = tmp_path / "c.cfg"
    cfg.write_text("k = 1\nbogus = 3\n")
    assert run(tmp_path, "y", "darcy", "--config", str(cfg))[0] == EXIT_CONFIG
    assert "bogus" in capsys.readouterr().err
    assert run(tmp_path, "z", "darcy", "--method", "dg")[0] == EXIT_CONFIG


def test_cfl_violation_exit_code(tmp_path):
    code, _ = run(tmp_path, "e", "transport", "--preset", "example1", "--scheme", "explicit", "--dt", "1.0",
                  "--steps", "2")
    assert code == EXIT_VALIDATION


def test_flags_override_config_file(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\ndomain = l_shape\nsteps = 7\ndt = 0.02\n")
    code, out = run(tmp_path, "o", "transport", "--config", str(cfg), "--steps", "3")
    assert code == EXIT_OK
    doc = json.loads((out / "manifest.json").read_text())
    assert doc["config"]["steps"] == 3 and doc["config"]["dt"] == 0.02
    assert len((out / "series_epg_P1.csv").read_text().splitlines()) == 5


def test_mesh_file_input(tmp_path):
    mesh_path = tmp_path / "m.txt"
    write_mesh(build_structured_mesh(unit_square(), 2), mesh_path)
    code, out = run(tmp_path, "m", "residuals", "--domain", "unit_square", "--mesh", str(mesh_path))
    assert code == EXIT_OK
    assert len((out / "residuals.csv").read_text().splitlines()) == 33


def test_convergence_command(tmp_path):
    code, out = run(tmp_path, "c", "convergence", "--k", "1", "--method", "epg", "--levels", "2-4")
    assert code == EXIT_OK
    assert (out / "rates_epg_P1.csv").exists()
    assert "rate_energy" in (out / "summary.txt").read_text()


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
