import csv
import json
import subprocess
import sys

import pytest

from gridadmm import cli

from conftest import FIXTURES

TWO_BUS_FILE = str(FIXTURES / "two_bus.m")
TOY_FLAGS = ["--rho-pq", "400", "--rho-va", "4000", "--beta0", "1e7", "--workers", "1"]


def run(tmp_path, *args):
    return cli.main(list(args) + ["--out-dir", str(tmp_path)])


def test_report_gap():
    assert cli.report_gap(101.0, 100.0) == pytest.approx(0.01)
    assert cli.report_gap(99.0, 100.0) == pytest.approx(0.01)
    with pytest.raises(ValueError):
        cli.report_gap(1.0, 0.0)


def test_solve_writes_artifacts(tmp_path, references):
    ref = references["two_bus"]["objective"]
    code = run(tmp_path, "solve", "--case", TWO_BUS_FILE, *TOY_FLAGS,
               "--ref-objective", str(ref))
    assert code == 0
    assert {p.name for p in tmp_path.iterdir()} == {"solution.json", "convergence.csv",
                                                    "manifest.json"}
    sol = json.loads((tmp_path / "solution.json").read_text())
    assert sol["status"] == "converged"
    assert sol["metrics"]["gap"] <= 1e-3
    assert len(sol["generators"]) == 1 and len(sol["buses"]) == 2
    assert set(sol["branches"][0]) >= {"pij", "qij", "pji", "qji"}
    with open(tmp_path / "convergence.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["outer", "inner", "primal_res", "dual_res", "z_norm", "elapsed_s"]
    assert len(rows) - 1 == sol["inner_iterations"]
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["config"]["rho_pq"] == 400.0 and man["mode"] == "solve"


def test_missing_case_names_path(tmp_path, capsys):
    code = run(tmp_path, "solve", "--case", "nowhere/missing.m", *TOY_FLAGS)
    assert code == 1
    assert "nowhere/missing.m" in capsys.readouterr().err


def test_track_without_profile_prints_usage(tmp_path, capsys):
    code = run(tmp_path, "track", "--case", TWO_BUS_FILE, *TOY_FLAGS)
    err = capsys.readouterr().err
    assert code == 1
    assert "usage:" in err and "--profile" in err


def test_unknown_case_without_penalties(tmp_path, capsys):
    code = run(tmp_path, "solve", "--case", TWO_BUS_FILE)
    assert code == 1
    assert "--rho-pq" in capsys.readouterr().err


def test_bad_flag_value_is_input_error(tmp_path, capsys):
    code = run(tmp_path, "solve", "--case", TWO_BUS_FILE, *TOY_FLAGS, "--eps", "-1")
    assert code == 1
    assert "eps" in capsys.readouterr().err


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"case": TWO_BUS_FILE, "rho_pq": 400, "rho_va": 4000,
                               "beta0": 1e7, "max_inner": 3, "max_outer": 1}))
    out = tmp_path / "out"
    code = cli.main(["--config", str(cfg), "--max-inner", "5", "--out-dir", str(out)])
    assert code == 2
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["max_inner"] == 5 and man["config"]["rho_va"] == 4000.0


def test_config_file_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["--config", str(bad)]) == 1
    bad.write_text(json.dumps({"colour": "blue"}))
    assert cli.main(["--config", str(bad)]) == 1
    assert "colour" in capsys.readouterr().err


def test_preset_selected_by_case_name():
    cfg = cli.make_config({"case": "case1354pegase"}, "case1354pegase")
    assert (cfg.rho_pq, cfg.rho_va) == (10.0, 1000.0)
    cfg = cli.make_config({"preset": "case118", "rho_va": 7.0}, "mine")
    assert cfg.rho_va == 7.0 and cfg.rho_pq == 400.0
    with pytest.raises(cli.InputError):
        cli.make_config({"preset": "case7"}, "x")


def test_track_mode(tmp_path):
    prof = tmp_path / "profile.csv"
    prof.write_text("period,multiplier\n1,1.0\n2,1.01\n3,1.0\n")
    out = tmp_path / "out"
    code = cli.main(["track", "--case", TWO_BUS_FILE, "--profile", str(prof), *TOY_FLAGS,
                     "--ramp-frac", "0.05", "--ref-objective", "676.24,680,676.24",
                     "--out-dir", str(out)])
    assert code == 0
    with open(out / "periods.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["period"] for r in rows] == ["1", "2", "3"]
    assert all(float(r["gap"]) < 0.05 for r in rows)
    with open(out / "convergence.csv") as fh:
        header = next(csv.reader(fh))
    assert header[0] == "period"
    sol = json.loads((out / "solution.json").read_text())
    assert len(sol["periods"]) == 3


def test_track_reference_count_checked(tmp_path, capsys):
    prof = tmp_path / "profile.csv"
    prof.write_text("period,multiplier\n1,1.0\n2,1.01\n")
    code = run(tmp_path, "track", "--case", TWO_BUS_FILE, "--profile", str(prof), *TOY_FLAGS,
               "--ref-objective", "1.0")
    assert code == 1
    assert "2 values" in capsys.readouterr().err


def test_negative_ramp_rejected(tmp_path, capsys):
    prof = tmp_path / "profile.csv"
    prof.write_text("period,multiplier\n1,1.0\n2,1.0\n")
    code = run(tmp_path, "track", "--case", TWO_BUS_FILE, "--profile", str(prof), *TOY_FLAGS,
               "--ramp-frac", "-0.5")
    assert code == 1
    assert "ramp" in capsys.readouterr().err


def test_no_timing_outputs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert cli.main(["solve", "--case", TWO_BUS_FILE, *TOY_FLAGS, "--no-timing",
                         "--out-dir", str(d)]) == 0
    for name in ("convergence.csv", "solution.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_iteration_limit_exit_code(tmp_path):
    assert run(tmp_path, "solve", "--case", TWO_BUS_FILE, *TOY_FLAGS,
               "--max-outer", "1", "--max-inner", "2") == 2


def test_divergence_exit_code(tmp_path, monkeypatch):
    real = cli.make_config

    def tiny_threshold(settings, name):
        return real(settings, name).with_(divergence=1e-6)

    monkeypatch.setattr(cli, "make_config", tiny_threshold)
    assert run(tmp_path, "solve", "--case", TWO_BUS_FILE, *TOY_FLAGS) == 3


def test_console_binary(tmp_path):
    exe = [sys.executable, "-m", "gridadmm.cli"]
    proc = subprocess.run(exe + ["solve", "--case", "case9.m", "--rho-pq", "10", "--rho-va",
                                 "1000", "--out-dir", str(tmp_path)],
                          capture_output=True, text=True, timeout=600)
    assert proc.returncode == 0, proc.stderr
    assert {p.name for p in tmp_path.iterdir()} == {"solution.json", "convergence.csv",
                                                    "manifest.json"}
    proc = subprocess.run(exe + ["--version"], capture_output=True, text=True)
    assert proc.stdout.strip().endswith("0.1.0")
