import csv
import json
import subprocess
import sys

import pytest

from homowave.cli import main

from conftest import BENCHMARK


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_validate(capsys):
    assert main(["validate", "--problem", str(BENCHMARK)]) == 0
    assert "ellipticity  PASS" in capsys.readouterr().out


def test_cell_solve(tmp_path, capsys):
    dump = tmp_path / "chi.csv"
    assert main(["cell-solve", "--problem", str(BENCHMARK), "--n", "64", "--dump-chi", str(dump)]) == 0
    assert "1.7320" in capsys.readouterr().out
    table = rows(dump)
    assert table[0] == ["node", "y1", "chi1"] and len(table) == 65


def test_effective(tmp_path):
    assert main(["effective", "--problem", str(BENCHMARK), "--out", str(tmp_path / "eff")]) == 0
    assert float(rows(tmp_path / "eff_tensor.csv")[0][0]) == pytest.approx(3**0.5, rel=1e-4)
    table = rows(tmp_path / "eff_nonlinear.csv")
    assert table[0] == ["v", "f", "g1"] and len(table) == 514


def test_simulate(tmp_path):
    out = tmp_path / "traj.csv"
    argv = ["simulate", "--problem", str(BENCHMARK), "--mode", "micro", "--eps", "0.25", "--nx", "63",
            "--nt", "64", "--seed", "7", "--out", str(out), "--dump-fields", "16"]
    assert main(argv) == 0
    table = rows(out)
    assert table[0] == ["t", "L2_u", "H1_u", "L2_v"] and len(table) == 66
    assert float(table[1][1]) == pytest.approx(0.5**0.5, rel=1e-3)
    assert out.with_suffix(".png").exists()
    assert len(rows(tmp_path / "traj_fields.csv")) == 1 + 5 * 63
    macro = tmp_path / "macro.csv"
    assert main(["simulate", "--problem", str(BENCHMARK), "--mode", "macro", "--nx", "31", "--nt", "32",
                 "--cell-n", "64", "--out", str(macro), "--no-figures"]) == 0
    assert not macro.with_suffix(".png").exists()


def test_converge_exit_code_tracks_verdicts(tmp_path):
    out = tmp_path / "conv"
    code = main(["converge", "--problem", str(BENCHMARK), "--eps", "0.5,0.25", "--paths", "2",
                 "--out", str(out), "--no-figures"])
    summary = json.loads((out / "summary.json").read_text())
    assert code == (0 if all(summary["verdicts"].values()) else 1)
    assert {"errors.csv", "estimates.csv", "summary.json"} <= {p.name for p in out.iterdir()}


def test_verify(tmp_path):
    code = main(["verify", "--problem", str(BENCHMARK), "--eps", "0.5,0.25", "--paths", "2",
                 "--out", str(tmp_path)])
    assert code in (0, 1)
    assert (tmp_path / "estimates.png").exists()


def test_ucv(tmp_path):
    out = tmp_path / "ucv.csv"
    assert main(["ucv", "--chi", "sin(2*pi*t)", "--theta", "sin(2*pi*tau)", "--out", str(out)]) == 0
    assert len(rows(out)) == 5


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "homowave.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "converge" in res.stdout


def test_missing_eps_for_micro(tmp_path):
    with pytest.raises(SystemExit):
        main(["simulate", "--problem", str(BENCHMARK), "--mode", "micro", "--out", str(tmp_path / "x.csv")])
