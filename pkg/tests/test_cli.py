from __future__ import annotations

import json
import os
import re
import subprocess
import sys

import pytest

from pracsim.cli import main


def run(*argv):
    env = dict(os.environ, PRACSIM_THREADS="1")
    return subprocess.run([sys.executable, "-m", "pracsim.cli", *argv], capture_output=True,
                          text=True, env=env)


def test_curve_contains_reference_row(capsys):
    assert main(["curve", "--n-mit", "1", "--proactive", "off", "--n-bo", "1", "32"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "n_bo,n_mit,proactive,max_r1,n_online,min_secure_trh"
    row = next(line for line in lines if line.startswith("32,1,off,"))
    assert abs(int(row.split(",")[-1]) - 71) <= 1


def test_curve_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        assert main(["curve", "--n-bo", "4", "64", "-o", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(a.read_text().splitlines()) == 1 + 2 * 3 * 2


def test_attack_and_replay(tmp_path, capsys):
    trace = tmp_path / "fe.trace"
    assert main(["attack", "fill-escape", "--threshold", "512", "--trace", str(trace)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["max_unmitigated"] >= 1283
    assert report["config"]["n_mit"] == 4
    stats = tmp_path / "fe.trace.stats.json"
    assert main(["replay", str(trace), "--expect", str(stats)]) == 0
    pinned = json.loads(stats.read_text())
    pinned["alerts"] += 1
    stats.write_text(json.dumps(pinned))
    assert main(["replay", str(trace), "--expect", str(stats)]) == 2
    assert "alerts" in capsys.readouterr().err


def test_attack_grid_is_a_list(capsys):
    assert main(["attack", "wave", "--r1", "1", "16", "--set", "t_refw=1000000"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert [r["config"]["r1"] for r in out] == [1, 16]


def test_simulate_and_bandwidth(capsys):
    assert main(["simulate", "--n-mit", "2", "--r1", "16", "--policy", "psq"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "n_bo,n_mit,r1,policy,empirical,analytical,rel_error"
    assert lines[1].startswith("32,2,16,psq,")
    assert main(["bandwidth"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "n_bo,scope,proactive,bw_loss" and len(lines) == 25


@pytest.mark.parametrize("argv", [
    ["frobnicate"],
    ["curve", "--set", "bogus=1"],
    ["curve", "--set", "n_bo"],
    ["attack", "fill-escape"],
    ["replay", "/nonexistent/trace"],
])
def test_usage_errors_exit_1(argv):
    assert main(argv) == 1


def test_invalid_values_are_usage_errors(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("t_refw = 1000\n")
    assert main(["attack", "wave", "--r1", "16", "--config", str(cfg)]) == 1
    assert main(["curve", "--set", "n_mit=3"]) == 1
    assert main(["attack", "wave", "--r1", "0"]) == 1


@pytest.mark.parametrize("cmd,cols", [
    ("curve", "n_bo,n_mit,proactive,max_r1,n_online,min_secure_trh"),
    ("simulate", "n_bo,n_mit,r1,policy,empirical,analytical,rel_error"),
    ("bandwidth", "n_bo,scope,proactive,bw_loss"),
])
def test_help_documents_every_column(cmd, cols):
    res = run(cmd, "--help")
    assert res.returncode == 0
    legend = res.stdout.split("CSV columns", 1)[1].split("\n", 1)[1]
    described = set(re.findall(r"^  ([a-z_0-9, ]+?)\s{2,}", legend, re.M))
    names = {n.strip() for d in described for n in d.split(",")}
    assert set(cols.split(",")) <= names


def test_subprocess_exit_codes():
    assert run("frobnicate").returncode == 1
    assert run("--version").returncode == 0
