import json
import subprocess
import sys

import numpy as np
import pytest

from dlhoqmc.cli import main
from dlhoqmc.harness import read_csv_data, read_report_csv
from dlhoqmc.lattice import epl_rule, qmc_integrate, read_generating_vector
from dlhoqmc.nn import load_model
from dlhoqmc.targets import rational_g


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_no_arguments_prints_usage(capsys):
    code, _, err = run(capsys)
    assert code == 2 and "usage" in err


def test_unknown_flag(capsys):
    code, _, err = run(capsys, "gen-points", "--kind", "plain", "--m", "4", "--d", "2",
                       "--out", "x.csv", "--bogus")
    assert code == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "dlhoqmc", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "dlhoqmc" in proc.stdout


def test_gen_points_epl(capsys, tmp_path):
    out = tmp_path / "sub" / "pts.csv"
    code, stdout, _ = run(capsys, "gen-points", "--kind", "epl", "--m", "8", "--d", "3",
                          "--out", out)
    assert code == 0
    big, _, meta = read_csv_data(tmp_path / "sub" / "pts_m8.csv")
    small, _, _ = read_csv_data(tmp_path / "sub" / "pts_m7.csv")
    assert big.shape == (256, 3) and small.shape == (128, 3)
    assert meta["m"] == "8"
    rule = epl_rule(8, 3)
    np.testing.assert_array_equal(big, rule.rules[0].points())
    side = json.loads((tmp_path / "sub" / "pts.csv.json").read_text())
    assert [float(a) for a in side["coeffs"]] == [2.0, -1.0]
    assert [r["m"] for r in side["rules"]] == [8, 7]
    assert int(side["rules"][0]["p"], 16) == rule.rules[0].p.bits


def test_gen_points_ipl(capsys, tmp_path):
    out = tmp_path / "ipl.csv"
    assert run(capsys, "gen-points", "--kind", "ipl", "--m", "6", "--d", "4", "--out", out)[0] == 0
    pts, _, _ = read_csv_data(out)
    assert pts.shape == (64, 4)
    side = json.loads((tmp_path / "ipl.csv.json").read_text())
    assert side["alpha"] == 2 and side["base_dimension"] == 8


def test_reruns_are_byte_identical(capsys, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        run(capsys, "gen-points", "--kind", "plain", "--m", "7", "--d", "5", "--out", path)
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.csv.json").read_bytes() == (tmp_path / "b.csv.json").read_bytes()


def test_integrate_matches_library(capsys):
    code, out, _ = run(capsys, "integrate", "--kind", "epl", "--m", "9", "--d", "4",
                       "--target", "rational")
    assert code == 0
    expect = qmc_integrate(rational_g, epl_rule(9, 4), d=4)
    assert float(out.strip()) == expect


def test_cbc_writes_vector(capsys, tmp_path):
    out = tmp_path / "gv.txt"
    assert run(capsys, "cbc", "--m", "6", "--d", "3", "--out", out)[0] == 0
    rule = read_generating_vector(out)
    assert rule.m == 6 and rule.d == 3 and rule.q[0].bits == 1
    assert run(capsys, "cbc", "--m", "5", "--d", "2", "--alpha", "2", "--interlaced",
               "--out", out)[0] == 0
    assert read_generating_vector(out).d == 4


def test_train_and_check_holo(capsys, tmp_path):
    pts = tmp_path / "pts.csv"
    run(capsys, "gen-points", "--kind", "epl", "--m", "5", "--d", "3", "--out", pts)
    cfg = tmp_path / "train.ini"
    cfg.write_text("[train]\ndepth = 2\nwidth = 5\nepochs = 50\nlr = 1e-3\n")
    model = tmp_path / "model.json"
    code, out, _ = run(capsys, "train", "--design", tmp_path / "pts_m5.csv",
                       tmp_path / "pts_m4.csv", "--config", cfg, "--target", "rational",
                       "--out", model)
    assert code == 0 and out.startswith("training_error=")
    params = load_model(model)
    assert params.arch.widths == (3, 5, 1)
    budget = tmp_path / "budget.ini"
    budget.write_text("[budget]\ntarget = rational\n")
    code, out, _ = run(capsys, "check-holo", "--model", model, "--budget", budget)
    assert code == 0 and "layer" in out.lower()


def test_train_rejects_unknown_key(capsys, tmp_path):
    cfg = tmp_path / "train.ini"
    cfg.write_text("[train]\nmomentum = 0.9\n")
    pts = tmp_path / "p.csv"
    run(capsys, "gen-points", "--kind", "plain", "--m", "3", "--d", "2", "--out", pts)
    code, _, err = run(capsys, "train", "--design", pts, "--config", cfg,
                       "--target", "rational", "--out", tmp_path / "m.json")
    assert code == 1
    assert err.startswith("error: ValueError:") and err.count("\n") == 1


def test_missing_file_error_line(capsys, tmp_path):
    code, _, err = run(capsys, "check-holo", "--model", tmp_path / "none.json",
                       "--budget", tmp_path / "none.ini")
    assert code == 1 and err.startswith("error: ")


def test_alpha_three_needs_coefficients(capsys):
    code, _, err = run(capsys, "integrate", "--kind", "epl", "--m", "6", "--d", "2",
                       "--alpha", "3", "--target", "rational")
    assert code == 1 and "NotImplementedError" in err


def test_fem_check(capsys):
    code, out, _ = run(capsys, "fem-check", "--n", "8", "16", "32", "--eig-n", "16")
    assert code == 0
    chunks = out.split("l2_rates=")[1:]
    assert len(chunks) == 2
    for chunk in chunks:
        rates = [float(r) for r in chunk.split()[0].split(",")]
        assert len(rates) == 2 and all(1.8 < r < 2.2 for r in rates)
    assert "relative_deviation=" in out


def test_study_tiny(capsys, tmp_path):
    code, out, _ = run(capsys, "study", "--target", "rational", "--d", "3", "--m-min", "4",
                       "--m-max", "6", "--mode", "untrained-clamped", "--workers", "1",
                       "--out", tmp_path)
    assert code == 0
    meta, rows = read_report_csv(tmp_path / "study.csv")
    assert [int(r["m"]) for r in rows] == [4, 5, 6]
    assert (tmp_path / "study.svg").exists() and (tmp_path / "study.ini").exists()
    first = (tmp_path / "study.csv").read_bytes()
    run(capsys, "study", "--config", tmp_path / "study.ini", "--workers", "1", "--out", tmp_path)
    assert (tmp_path / "study.csv").read_bytes() == first


def test_study_rejects_bad_levels(capsys, tmp_path):
    code, _, err = run(capsys, "study", "--target", "rational", "--d", "3", "--m-min", "6",
                       "--m-max", "4", "--out", tmp_path)
    assert code == 1 and err.startswith("error: ValueError")
