import json
import os
import subprocess
import sys

import pytest

from fluxlab.cli import ExperimentConfig, load_config, main
from fluxlab.errors import ConfigError


def write_cfg(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def result(out, name):
    return json.loads((out / name).read_text())["result"]


def test_selftest_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "fluxlab.cli", "selftest", "--out", str(tmp_path / "st")],
        capture_output=True,
        text=True,
        timeout=300,
    )
    assert proc.returncode == 0, proc.stderr
    lines = proc.stdout.strip().split("\n")
    assert lines and all(line.startswith("PASS") for line in lines)
    assert (tmp_path / "st" / "selftest.txt").exists()


def test_conductance_trivial(tmp_path):
    cfg = write_cfg(tmp_path, {"model": "trivial_atomic", "overrides": {"L": 4, "staggered": 1.0}, "n_grid": 4})
    out = tmp_path / "o"
    assert main(["conductance", "--config", cfg, "--out", str(out)]) == 0
    res = result(out, "conductance.json")
    assert abs(res["sigma_xy"]) < 1e-10 and res["fhs_chern"] == 0
    scan = (out / "fhs_scan.csv").read_text().split("\n")
    assert scan[0].startswith("# config_hash=") and scan[1].startswith("theta_x")


def test_decompose_toy(tmp_path):
    cfg = write_cfg(tmp_path, {"N_values": [2]})
    out = tmp_path / "o"
    assert main(["decompose", "--config", cfg, "--out", str(out)]) == 0
    assert result(out, "decompose.json")["residuals"]["2"]["residual"] <= 1e-7


def test_reruns_are_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, {"n_grid": 4})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["conductance", "--config", cfg, "--out", str(a)]) == 0
    assert main(["conductance", "--config", cfg, "--out", str(b)]) == 0
    for name in ("conductance.json", "fhs_scan.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    meta = json.loads((a / "metadata.json").read_text())
    assert meta["config_hash"] == ExperimentConfig(n_grid=4).digest()


def test_config_errors_list_every_field(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"model": "nope", "alpha": -1, "n_grid": 1, "extra": 3})
    out = tmp_path / "o"
    assert main(["conductance", "--config", cfg, "--out", str(out)]) == 2
    err = capsys.readouterr().err
    for key in ("model", "alpha", "n_grid", "extra"):
        assert f"{key}:" in err
    assert not out.exists()


def test_unreadable_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["conductance", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["conductance", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 2


def test_numeric_failure_leaves_no_outputs(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"overrides": {"m": 0.0}, "n_grid": 4})
    out = tmp_path / "o"
    assert main(["conductance", "--config", cfg, "--out", str(out)]) == 3
    assert "DegeneracyError" in capsys.readouterr().err
    assert not out.exists() or os.listdir(out) == []


def test_cli_flags_override(tmp_path):
    out = tmp_path / "o"
    assert main(["decompose", "--out", str(out), "--seed", "3", "--tolerance", "1e-7", "--threads", "2"]) == 0
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["config"]["seed"] == 3 and meta["config"]["tol"] == 1e-7 and meta["config"]["threads"] == 2


def test_load_config_defaults():
    assert load_config({}) == ExperimentConfig()
    assert load_config({"alpha": "paper-formula"}).alpha == "paper-formula"
    with pytest.raises(ConfigError):
        load_config({"r_values": [10.0]})
