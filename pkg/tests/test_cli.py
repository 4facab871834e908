import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from atomask.cli import main, z_grid
from atomask.config import PRESETS, resolve

FAST = ["quadrature.n_x0=20", "run.z_grid=[0,2000,100]"]


def run_cli(capsys, *argv):
    code = main(list(argv))
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def test_z_grid_inclusive():
    np.testing.assert_allclose(z_grid([0, 3000, 1]), np.arange(3001.0))
    assert z_grid([0.0, 1.0, 0.3]).tolist() == pytest.approx([0.0, 0.3, 0.6, 0.9])


def test_every_preset_resolves():
    for name, preset in PRESETS.items():
        cfg = resolve(preset=name)
        assert cfg.command == preset["command"]
        assert len(cfg.expand()) == max(1, len(preset.get("cases", {})))


def test_free_preset_localization(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "localization", "--preset", "free", "--out", str(tmp_path), *FAST)
    assert code == 0
    assert json.loads(out)["output"] == str(tmp_path)
    data = np.loadtxt(tmp_path / "curve.csv", delimiter=",", skiprows=1)
    assert data.shape == (21, 2)
    np.testing.assert_allclose(data[:, 1], 1.0, atol=1e-12)
    side = json.loads((tmp_path / "curve.json").read_text())
    assert side["points"] == 21 and "minimum" in side


def test_trajectories_preset_cases(tmp_path, capsys):
    code, _, _ = run_cli(capsys, "trajectories", "--preset", "thin_focusing", "--out", str(tmp_path),
                         "run.n_rays=3")
    assert code == 0
    for case in ("single", "double"):
        files = sorted(p.name for p in (tmp_path / case).iterdir())
        assert files == ["traj_0.csv", "traj_1.csv", "traj_2.csv"]
    head = (tmp_path / "single" / "traj_0.csv").read_text().splitlines()[:2]
    assert head[0].startswith("# x0=-0.25") and head[1] == "z,x,alpha"


def test_focus_command(tmp_path, capsys):
    code, _, _ = run_cli(capsys, "focus", "--preset", "baseline", "--out", str(tmp_path))
    assert code == 0
    assert json.loads((tmp_path / "focus.json").read_text())["z_f"] == pytest.approx(700, abs=35)


def test_density_needs_plane(tmp_path, capsys):
    code, _, err = run_cli(capsys, "density", "--out", str(tmp_path))
    assert code == 2
    assert json.loads(err)["error"] == "ConfigError"
    assert json.loads((tmp_path / "error.json").read_text())["error"] == "ConfigError"


def test_density_command(tmp_path, capsys):
    code, _, _ = run_cli(capsys, "density", "--out", str(tmp_path), "--seed", "3",
                         "run.z=1300", "run.n_atoms=2000", "run.bins=50")
    assert code == 0
    d = np.loadtxt(tmp_path / "density.csv", delimiter=",", skiprows=1)
    assert d.shape == (50, 2)
    assert json.loads((tmp_path / "density.json").read_text())["seed"] == 3


def test_optimize_and_scan_commands(tmp_path, capsys):
    small = ["search.grid=[1,1]", "search.max_evals=10", "quadrature.n_x0=10"]
    assert run_cli(capsys, "optimize", "--out", str(tmp_path / "o"), *small)[0] == 0
    assert (tmp_path / "o" / "optimum.json").exists()
    assert (tmp_path / "o" / "optimum.csv").exists()
    assert run_cli(capsys, "scan", "--out", str(tmp_path / "s"), "run.ratios=[0,1]", *small)[0] == 0
    rows = (tmp_path / "s" / "scan.csv").read_text().splitlines()
    assert rows[0] == "I_r,L_min,z_m,S_m,error" and len(rows) == 3


def test_unknown_key_rejected(tmp_path, capsys):
    code, _, err = run_cli(capsys, "localization", "--out", str(tmp_path), "mask.colour=1")
    assert code == 2
    assert "colour" in json.loads(err)["message"]


def test_compute_error_exit_code(tmp_path, capsys):
    code, _, err = run_cli(capsys, "trajectories", "--out", str(tmp_path),
                           "integrator.max_steps=3", "run.n_rays=2")
    assert code == 3
    assert json.loads(err)["error"] == "StepLimitExceeded"
    assert (tmp_path / "error.json").exists()


def test_missing_config_is_io_error(tmp_path, capsys):
    code, _, err = run_cli(capsys, "localization", "--config", str(tmp_path / "nope.yaml"))
    assert code == 4
    assert json.loads(err)["error"] == "IoError"


def test_energy_below_barrier_is_config_error(tmp_path, capsys):
    code, _, _ = run_cli(capsys, "localization", "--out", str(tmp_path), "beam.energy=100",
                         "mask.i1=37500", *FAST)
    assert code == 2


def test_round_trip_is_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(capsys, "localization", "--preset", "baseline", "--out", str(a), *FAST)[0] == 0
    cfg = a / "resolved_config.json"
    assert run_cli(capsys, "localization", "--config", str(cfg), "--out", str(b))[0] == 0
    assert (a / "curve.csv").read_bytes() == (b / "curve.csv").read_bytes()
    assert cfg.read_bytes() == (b / "resolved_config.json").read_bytes()


def test_yaml_config_and_override_precedence(tmp_path, capsys):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({"command": "focus", "mask": {"i1": 1000.0, "i2": 1000.0,
                                                                "separation": 500.0}}))
    code, _, _ = run_cli(capsys, "focus", "--config", str(path), "--out", str(tmp_path / "o"))
    assert code == 0
    z_f = json.loads((tmp_path / "o" / "focus.json").read_text())["z_f"]
    assert z_f == pytest.approx(650, abs=35)
    cfg = resolve(path, overrides=["mask.separation=0"])
    assert cfg.mask.separation == 0.0 and cfg.mask.i2 == 1000.0


def test_writes_only_inside_output(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("ATOMASK_OUT", raising=False)
    assert run_cli(capsys, "localization", "--preset", "free", *FAST)[0] == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["atomask_out"]
    assert (tmp_path / "atomask_out" / "free" / "curve.csv").exists()


def test_env_output_root(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("ATOMASK_OUT", str(tmp_path / "env"))
    assert run_cli(capsys, "localization", *FAST)[0] == 0
    assert (tmp_path / "env" / "localization" / "curve.csv").exists()
    assert sorted(p.name for p in tmp_path.iterdir()) == ["env"]


def write_yaml(tmp_path, data):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(data))
    return str(path)


def test_validate_baseline_clean(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "validate", "--config", write_yaml(tmp_path, {"preset": "baseline"}))
    rep = json.loads(out)
    assert code == 0 and rep["valid"]
    assert rep["errors"] == [] and rep["warnings"] == []


def test_validate_reports_field(tmp_path, capsys):
    data = {"command": "localization", "mask": {"sigma_z": -5.0}, "beam": {"colour": 1}}
    code, out, _ = run_cli(capsys, "validate", "--config", write_yaml(tmp_path, data))
    rep = json.loads(out)
    assert code == 1 and not rep["valid"]
    assert any("sigma_z" in e for e in rep["errors"])
    assert any("colour" in e for e in rep["errors"])


def test_validate_warns_on_slow_beam(tmp_path, capsys):
    data = {"command": "localization", "mask": {"i1": 37500.0}, "beam": {"energy": 100.0}}
    code, out, _ = run_cli(capsys, "validate", "--config", write_yaml(tmp_path, data))
    rep = json.loads(out)
    assert code == 0 and rep["valid"]
    assert len(rep["warnings"]) == 1 and "energy" in rep["warnings"][0]


def test_validate_checks_cases(tmp_path, capsys):
    data = {"command": "localization",
            "cases": {"bad": {"mask": {"i1": -1.0}}, "good": {"mask": {"i1": 10.0}}}}
    code, out, _ = run_cli(capsys, "validate", "--config", write_yaml(tmp_path, data))
    rep = json.loads(out)
    assert code == 1
    assert all(e.startswith("cases.bad:") for e in rep["errors"])


def test_validate_needs_config(capsys):
    assert run_cli(capsys, "validate")[0] == 2


def test_console_script_version():
    res = subprocess.run([sys.executable, "-m", "atomask.cli", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.startswith("atomask ")
