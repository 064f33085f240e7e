import csv
import json
import os
import subprocess
import sys

import pytest

from otmatch import cli


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_help_lists_defaults(capsys):
    for sub in ("solve", "match", "simulate", "diagnose", "lalonde"):
        with pytest.raises(SystemExit):
            cli.main([sub, "--help"])
        out = capsys.readouterr().out
        assert "--epsilon" in out or sub == "simulate"
        assert "default" in out
    with pytest.raises(SystemExit):
        cli.main(["match", "--help"])
    out = capsys.readouterr().out
    for flag in ("--method", "--estimand", "--drop-threshold", "--bootstrap", "--seed",
                 "--alpha", "--emit-replicates", "--divergence", "--match-table"):
        assert flag in out
    assert "kl:1" in out


def test_solve_single_points(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_text("x,y\n1.5,2\n")
    b.write_text("x,y\n1.5,2\n")
    out = tmp_path / "g.csv"
    code, _, _ = run(["solve", str(a), str(b), "--epsilon", "0.1", "--output", str(out)], capsys)
    assert code == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["i1", "i2", "mass"] and len(rows) == 2
    assert rows[1][:2] == ["0", "0"] and float(rows[1][2]) == pytest.approx(1.0, abs=1e-14)
    summary = json.loads((tmp_path / "g.json").read_text())
    assert summary["schema"] == 1 and summary["converged"]
    for key in ("iterations", "residual", "dual_value", "total_mass", "marginal_errors"):
        assert key in summary


def test_match_lalonde(tmp_path, capsys):
    out = tmp_path / "m.json"
    code, _, _ = run(["match", "--nsw", "--method", "ot", "--epsilon", "1e-3",
                      "--estimand", "att", "--output", str(out)], capsys)
    assert code == 0
    res = json.loads(out.read_text())
    assert res["schema"] == 1 and res["divergence"] == "kl:1"
    assert res["estimate"]["point"] == pytest.approx(828.34, rel=0.10)


def test_match_bootstrap_and_table(tmp_path, capsys):
    data = tmp_path / "d.csv"
    lines = ["t,y,a,b"] + [f"{i % 2},{i * 0.5 + (i % 2)},{i % 5},{(i * 7) % 3}" for i in range(30)]
    data.write_text("\n".join(lines) + "\n")
    table = tmp_path / "t.csv"
    args = ["match", "--data", str(data), "--treatment-col", "t", "--outcome-col", "y",
            "--epsilon", "0.1", "--bootstrap", "20", "--seed", "4", "--emit-replicates",
            "--match-table", str(table)]
    code, out, _ = run(args, capsys)
    assert code == 0
    res = json.loads(out)
    assert len(res["estimate"]["replicates"]) == 20 and res["bootstrap"]["seed"] == 4
    assert len(list(csv.reader(table.open()))) == 31
    code, out2, _ = run(args, capsys)
    assert out2 == out
    for method in ("knn:3", "ipw:hajek", "unadjusted"):
        code, out, _ = run(["match", "--data", str(data), "--treatment-col", "t",
                            "--outcome-col", "y", "--method", method], capsys)
        assert code == 0, method


def test_simulate_rerun_identical(tmp_path, capsys):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        code, _, _ = run(["simulate", "--case", "2", "--methods", "ot", "--eps", "1e-3",
                          "--bootstrap", "100", "--seed", "7", "--output", str(p)], capsys)
        assert code == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    rows = list(csv.reader(paths[0].open()))
    assert len(rows) == 2 and rows[1][0] == "ot"


def test_diagnose_header(capsys):
    code, out, _ = run(["diagnose", "--nsw"], capsys)
    assert code == 0
    assert out.splitlines()[0] == "covariate,x0.mean,x1.mean,t.p_value,var.ratio,F.p_value,KS.p_value"
    code, out, _ = run(["diagnose", "--nsw", "--matched"], capsys)
    assert code == 0 and len(out.splitlines()) == 8


def test_lalonde_pipeline(tmp_path, capsys):
    code, out, _ = run(["lalonde", "--output-dir", str(tmp_path)], capsys)
    assert code == 0
    sumstats = list(csv.reader((tmp_path / "lalonde_sumstats.csv").open()))
    assert sumstats[1] == ["N", "297.00", "425.00"]
    est = {r[0]: r for r in csv.reader((tmp_path / "lalonde_estimates.csv").open())}
    assert float(est["knn1"][2]) == pytest.approx(481.81, rel=0.05)
    for key in ("before", "after"):
        assert (tmp_path / f"lalonde_balance_{key}.csv").exists()


def test_exit_codes(tmp_path, capsys):
    assert run(["simulate", "--case", "1"], capsys)[0] == 1
    assert run(["match", "--nsw", "--unknown-flag"], capsys)[0] == 1
    assert run(["match", "--nsw", "--method", "magic"], capsys)[0] == 1
    assert run([], capsys)[0] == 1
    code, _, err = run(["match", "--data", str(tmp_path / "missing.csv")], capsys)
    assert code == 2 and err.count("\n") == 1
    bad = tmp_path / "bad.csv"
    bad.write_text("x\nabc\n")
    assert run(["solve", str(bad), str(bad)], capsys)[0] == 2
    code, _, err = run(["match", "--nsw", "--drop-threshold", "1e12"], capsys)
    assert code == 3 and "numerical" in err


def test_log_env_and_module_entry(tmp_path):
    env = dict(os.environ, OTMATCH_LOG="debug")
    res = subprocess.run([sys.executable, "-m", "otmatch.cli", "--version"],
                         capture_output=True, text=True, env=env)
    assert res.returncode == 0 and res.stdout.strip()
