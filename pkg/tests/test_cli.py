import json

import numpy as np
import pytest

from heraldloop.analysis import read_table
from heraldloop.cli import main


@pytest.fixture(scope="module")
def run_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("sim") / "run.csv"
    assert main(["simulate", "--zeta", "0.3", "--t", "2", "--shots", "1000000", "--seed", "42", "-o", str(path)]) == 0
    return path


def test_theory_sweep(tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["theory", "--n", "2", "--zeta-grid", "0.05:0.35:0.01", "--lossless", "-o", str(out)]) == 0
    meta, rows = read_table(out)
    assert len(rows) == 31
    assert list(rows[0]) == ["zeta", "gamma", "P_DH", "P_FH", "F_DH", "F_FH"]
    assert rows[-1]["zeta"] == 0.35
    assert all(r["P_FH"] > r["P_DH"] for r in rows)
    assert meta["config"]["eta_loop"] == 1.0 and meta["n"] == 2


def test_theory_single_pattern(capsys):
    assert main(["theory", "--pattern", "1,1", "--zeta", "0.3", "--eta-loop", "0.6"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("#") and lines[1] == "zeta,gamma,P,F"
    assert len(lines) == 3
    meta = json.loads(lines[0][1:])
    assert meta["config"]["eta_prime"] == 0.36


def test_theory_custom_target(tmp_path, capsys):
    target = tmp_path / "target.txt"
    target.write_text("0,0.1,0.9,0,0,0,0,0,0\n")
    assert main(["theory", "--pattern", "2", "--zeta", "0.3", "--convention", "c", "--target-file", str(target)]) == 0
    assert main(["theory", "--pattern", "2", "--zeta", "0.3", "--convention", "c"]) == 2


def test_theory_json(capsys):
    assert main(["theory", "--pattern", "2", "--zeta", "0.2", "--format", "json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["columns"] == ["zeta", "gamma", "P", "F"]


def test_theory_invalid_pattern(capsys):
    assert main(["theory", "--pattern", "5", "--zeta", "0.3"]) == 2
    assert "herald" in capsys.readouterr().err


def test_simulate_line_count(run_file):
    lines = run_file.read_text().splitlines()
    assert lines[0].startswith("#") and lines[1] == "pass1,pass2,signal"
    assert len(lines) - 2 == 1_000_000
    meta = json.loads(lines[0][1:])
    assert meta["seed"] == 42 and meta["shots"] == 1_000_000


def test_simulate_reproducible(run_file, tmp_path):
    again = tmp_path / "again.csv"
    assert main(["simulate", "--zeta", "0.3", "--t", "2", "--shots", "1000000", "--seed", "42", "--threads", "3", "-o", str(again)]) == 0
    assert again.read_bytes() == run_file.read_bytes()


def test_simulate_threads_from_env(tmp_path, monkeypatch):
    monkeypatch.setenv("HERALDLOOP_THREADS", "2")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", "--zeta", "0.2", "--shots", "50000", "--seed", "1", "-o", str(a)]) == 0
    monkeypatch.setenv("HERALDLOOP_THREADS", "1")
    assert main(["simulate", "--zeta", "0.2", "--shots", "50000", "--seed", "1", "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_simulate_generates_seed(tmp_path, capsys):
    path = tmp_path / "s.csv"
    assert main(["simulate", "--zeta", "0.2", "--shots", "10", "-o", str(path)]) == 0
    seed = json.loads(path.read_text().splitlines()[0][1:])["seed"]
    assert f"seed {seed}" in capsys.readouterr().err


def test_simulate_zero_shots(tmp_path):
    assert main(["simulate", "--zeta", "0.3", "--shots", "0", "-o", str(tmp_path / "x.csv")]) == 2


def test_analyze_trio(run_file, tmp_path):
    out = tmp_path / "table.csv"
    assert main(["analyze", str(run_file), "--patterns", "(2);(1,1);(2,0)", "-o", str(out)]) == 0
    meta, rows = read_table(out)
    assert [r["pattern"] for r in rows] == ["(2)", "(1,1)", "(2,0)"]
    assert [r["t"] for r in rows] == [1, 2, 2]
    assert all(r["n"] == 2 for r in rows)
    assert meta["source"]["seed"] == 42 and meta["insufficient_data"] == []
    assert rows[1]["P"] > rows[0]["P"]


def test_analyze_zero_matches(run_file, capsys):
    assert main(["analyze", str(run_file), "--patterns", "(1,1);(4,4)"]) == 0
    captured = capsys.readouterr()
    assert "(4,4)" in captured.err
    lines = captured.out.splitlines()
    assert json.loads(lines[0][1:])["insufficient_data"] == ["(4,4)"]
    assert "nan" in lines[3]


def test_analyze_only_empty_patterns(run_file):
    assert main(["analyze", str(run_file), "--patterns", "(4,4)"]) == 4


def test_analyze_check_oracle(run_file, tmp_path):
    out = tmp_path / "oracle.csv"
    assert main(["analyze", str(run_file), "--patterns", "(1,1);(2)", "--check-oracle", "-o", str(out)]) == 0
    _, rows = read_table(out)
    for r in rows:
        assert {"P_exact", "P_dev_sigma", "F_exact", "F_dev_sigma"} <= set(r)
        assert abs(r["P_dev_sigma"]) < 5
        assert np.isfinite(r["F_dev_sigma"])


def test_analyze_missing_file(tmp_path):
    assert main(["analyze", str(tmp_path / "nope.csv"), "--patterns", "(1)"]) == 5


def test_analyze_pattern_too_long(run_file):
    assert main(["analyze", str(run_file), "--patterns", "(1,1,1)"]) == 2


def test_verify_quick(capsys):
    assert main(["verify", "--quick"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 8


def test_verify_detects_fault(capsys):
    assert main(["verify", "--only", "2,3", "--inject-gain-fault", "1e-3"]) == 1
    out = capsys.readouterr().out
    assert out.count("[FAIL]") == 2
