import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from conftest import CALIBRATED, PAPER
from splitwell.cli import (
    EXIT_CHECK,
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    EXIT_OK,
    _envelope_decreasing,
    load_run_config,
    main,
)
from splitwell.errors import ConfigError


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    """Calibrated trap on a coarse grid so every command runs in seconds."""
    data = yaml.safe_load(CALIBRATED.read_text())
    data["run"] = {"calibrate": False, "s_points": 101, "n_states": 4, "grid_points": 384,
                   "half_width_um": 8.0}
    path = tmp_path_factory.mktemp("cfg") / "small.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


def run(config, *args, out):
    return main([args[0], "--config", str(config), "--out", str(out), *args[1:]])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# --- commands -----------------------------------------------------------------


def test_potential(small_config, tmp_path):
    assert run(small_config, "potential", "--check", out=tmp_path) == EXIT_OK
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["potential_s0.csv", "potential_s0p5.csv", "potential_s1.csv"]
    assert read_csv(tmp_path / "potential_s1.csv")[0] == ["x_um", "U_over_h_Hz"]


def test_potential_custom_and_empty_s_list(small_config, tmp_path):
    assert run(small_config, "potential", "--s-list", "0.25", out=tmp_path) == EXIT_OK
    assert (tmp_path / "potential_s0p25.csv").exists()
    assert run(small_config, "potential", "--s-list", out=tmp_path) == EXIT_CONFIG


def test_spectrum(small_config, tmp_path):
    assert run(small_config, "spectrum", "--check", out=tmp_path) == EXIT_OK
    rows = read_csv(tmp_path / "levels.csv")
    assert rows[0] == ["s", "E0_over_hbar", "E1_over_hbar", "E2_over_hbar", "E3_over_hbar"]
    assert all(len(r) == 5 for r in rows)
    E = np.array(rows[-1][1:], float)
    assert E[1] - E[0] < 0.02 * (E[2] - E[0])


def test_coarse_s_grid_is_refined(small_config, tmp_path, caplog):
    import logging
    data = yaml.safe_load(small_config.read_text())
    data["run"]["s_points"] = 11
    path = tmp_path / "coarse.yaml"
    path.write_text(yaml.safe_dump(data))
    with caplog.at_level(logging.INFO):
        assert main(["spectrum", "--config", str(path), "--out", str(tmp_path)]) == EXIT_OK
    assert any("refining s-grid" in m for m in caplog.messages)
    assert len(read_csv(tmp_path / "levels.csv")) - 1 > 11


def test_sweep_and_determinism(small_config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(small_config, "sweep", "--ramp", "linear,optimized", "--T-list", "20", "40",
                   "60", out=out) == EXIT_OK
    for name in ("excitation_linear.csv", "excitation_optimized.csv", "couplings.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    rows = read_csv(a / "excitation_linear.csv")
    assert rows[0] == ["T_ms", "P_0_2", "P_1_3", "flag_perturbative"]
    assert [float(r[0]) for r in rows[1:]] == [20.0, 40.0, 60.0]


def test_sweep_check(small_config, tmp_path):
    code = run(small_config, "sweep", "--ramp", "linear,optimized", "--check", out=tmp_path)
    assert code == EXIT_OK


def test_optimize(small_config, tmp_path):
    assert run(small_config, "optimize", "--check", "--ramp-T-ms", "25", out=tmp_path) == EXIT_OK
    rows = read_csv(tmp_path / "ramp_optimized.csv")
    assert rows[0] == ["t_s", "s"]
    assert float(rows[1][0]) == 0.0 and float(rows[1][1]) == 0.0
    assert float(rows[-1][0]) == pytest.approx(0.025) and float(rows[-1][1]) == 1.0
    rep = json.loads((tmp_path / "optimizer_report.json").read_text())
    assert {"A", "T0_s", "floor", "floor_rel", "T_s"} <= set(rep)


def test_cycle(small_config, tmp_path):
    code = run(small_config, "cycle", "--ramp", "optimized", "--ramp-T-ms", "2", "--phases", "3",
               out=tmp_path)
    assert code == EXIT_OK
    rows = read_csv(tmp_path / "cycle.csv")
    assert rows[0] == ["dphi_rad", "P0", "P1", "P2", "P3", "leakage"] and len(rows) == 4
    assert float(rows[3][0]) == pytest.approx(2 * np.pi)


# --- exit codes ---------------------------------------------------------------


def test_config_errors(small_config, tmp_path):
    assert main(["spectrum", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    assert run(small_config, "sweep", "--pairs", "0:1", out=tmp_path) == EXIT_CONFIG
    assert run(small_config, "sweep", "--T-list", "40", "20", out=tmp_path) == EXIT_CONFIG
    assert run(small_config, "sweep", "--ramp", "cubic", out=tmp_path) == EXIT_CONFIG
    assert main(["bogus"]) == EXIT_CONFIG
    bad = tmp_path / "bad.yaml"
    bad.write_text("trap: {}\nrun: {colour: red}\n")
    assert main(["spectrum", "--config", str(bad)]) == EXIT_CONFIG


def test_cross_parity_flag(small_config, tmp_path):
    code = run(small_config, "sweep", "--pairs", "0:1", "--allow-cross-parity", "--T-list", "30",
               out=tmp_path)
    assert code == EXIT_OK


def test_numerical_failure(small_config, tmp_path):
    data = yaml.safe_load(small_config.read_text())
    data["run"]["half_width_um"] = 1.0
    path = tmp_path / "narrow.yaml"
    path.write_text(yaml.safe_dump(data))
    assert main(["spectrum", "--config", str(path), "--out", str(tmp_path)]) == EXIT_NUMERICAL


def test_check_failure_on_uncalibrated_paper_geometry(tmp_path):
    code = main(["spectrum", "--config", str(PAPER), "--no-calibrate", "--out", str(tmp_path),
                 "--check"])
    assert code == EXIT_CHECK


def test_console_entry_point(small_config, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "splitwell.cli", "potential", "--config",
                           str(small_config), "--out", str(tmp_path), "--s-list", "0"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "potential_s0.csv").exists()


# --- config -------------------------------------------------------------------


def test_run_config_overrides(small_config):
    cfg = load_run_config(small_config, {"T_list_ms": ["5", "10"], "pairs": "0:2"})
    assert cfg.T_list_ms == [5.0, 10.0] and cfg.pairs == [(0, 2)]
    assert cfg.grid_points == 384 and not cfg.calibrate
    with pytest.raises(ConfigError):
        load_run_config(small_config, {"pairs": "zero:two"})


def test_envelope_helper():
    T = np.linspace(10, 100, 91)
    assert _envelope_decreasing(T, 1.0 / T**2 * (1 + np.cos(T)))
    assert not _envelope_decreasing(T, T)
