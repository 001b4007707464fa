import csv
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from lowrank.experiments import parse_config, preset, run_experiment, serialize
from lowrank.experiments.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, EXIT_VERIFY, main
from lowrank.experiments.runner import mean_curve, thread_count, execute

HEADER = ("run_id,method,seed,iter,loss,resid_fro,resid_rel,theory_bound,dist_x,dist_y,leakage,"
          "contraction_measured,decomposition_residual")

SMALL = """\
[experiment]
name = small
methods = ["gd", "altgd", "nag"]
seeds = 3

[problem]
kind = mf
m = 12
n = 9
r = 2
sigma_r = 0.5

[init]
scheme = mf-sketch
d = 4

[stop]
eps = 1e-6
max_iters = 3000
"""


def write(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_exit_codes_distinct():
    assert len({EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_VERIFY}) == 4 and EXIT_OK == 0


def test_run_writes_csv(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    out = tmp_path / "out"
    assert main(["run", cfg, "--out", str(out)]) == EXIT_OK
    files = sorted(p.name for p in out.iterdir())
    assert "small_gd.csv" in files and "small_nag_mean.csv" in files and "small_summary.csv" in files
    raw = (out / "small_gd.csv").read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().split("\n")
    assert lines[0] == HEADER and lines[-1] == ""
    rows = list(csv.DictReader(lines[:-1]))
    first = rows[0]
    assert first["leakage"] == "" and first["iter"] == "0"
    loss, fro = float(first["loss"]), float(first["resid_fro"])
    assert loss == pytest.approx(0.5 * fro * fro, rel=1e-12)
    # 17 significant digits round-trip exactly
    assert repr(float(first["resid_fro"])) == repr(np.float64(first["resid_fro"]).item())
    by_seed = {}
    for r in rows:
        by_seed.setdefault(r["seed"], []).append(int(r["iter"]))
    for its in by_seed.values():
        assert its == list(range(len(its)))


def test_run_byte_identical(tmp_path):
    cfg = write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", cfg, "--out", str(a)]) == 0
    assert main(["run", cfg, "--out", str(b), "--diagnostics", "off"]) == 0
    for p in a.iterdir():
        assert p.read_bytes() == (b / p.name).read_bytes(), p.name


def test_byte_identical_across_thread_counts(tmp_path, monkeypatch):
    cfg = write(tmp_path, SMALL)
    monkeypatch.setenv("LOWRANK_THREADS", "1")
    assert main(["run", cfg, "--out", str(tmp_path / "one")]) == 0
    monkeypatch.setenv("LOWRANK_THREADS", "4")
    assert main(["run", cfg, "--out", str(tmp_path / "four")]) == 0
    for p in (tmp_path / "one").iterdir():
        assert p.read_bytes() == (tmp_path / "four" / p.name).read_bytes()


def test_thread_env_validation(monkeypatch):
    monkeypatch.setenv("LOWRANK_THREADS", "0")
    from lowrank.init import ConfigError

    with pytest.raises(ConfigError):
        thread_count()
    monkeypatch.setenv("LOWRANK_THREADS", "3")
    assert thread_count() == 3


def test_seed_order_invariance(tmp_path):
    a = parse_config(SMALL.replace("seeds = 3", "seeds = [0, 1, 2]"))
    b = parse_config(SMALL.replace("seeds = 3", "seeds = [2, 0, 1]"))
    run_experiment(a, tmp_path / "a")
    run_experiment(b, tmp_path / "b")
    for name in ("small_gd_mean.csv", "small_nag_mean.csv", "small_gd.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_mean_curve_truncates(tmp_path):
    cells = execute(parse_config(SMALL))
    for cell in cells:
        iters, mean, _ = mean_curve(cell.records)
        shortest = min(len(r.result.trace) for r in cell.records)
        assert len(iters) == shortest
        stack = np.stack([r.result.trace.loss[:shortest] for r in cell.records])
        np.testing.assert_allclose(mean, stack.mean(axis=0), rtol=1e-15)
        gi, gmean, _ = mean_curve(cell.records, "geometric")
        np.testing.assert_allclose(gmean, np.exp(np.log(stack).mean(axis=0)), rtol=1e-12)


def test_config_error_exit(tmp_path, capsys):
    bad = write(tmp_path, SMALL.replace("d = 4", "d = 1"))
    assert main(["run", bad]) == EXIT_CONFIG
    assert "line 15" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG
    assert main(["run", write(tmp_path, SMALL, "ok.cfg"), "--out", str(tmp_path)]) == EXIT_OK


def test_divergence_exit(tmp_path, capsys):
    text = SMALL + "\n[hyper]\nstep_rule = scaled\neta = 40.0\n"
    assert main(["run", write(tmp_path, text), "--out", str(tmp_path / "o")]) == EXIT_DIVERGED
    summary = (tmp_path / "o" / "small_summary.csv").read_text()
    assert "diverged" in summary
    assert "diverged" in capsys.readouterr().err


def test_verify_tiny_passes(tmp_path, capsys):
    assert main(["verify", "tiny", "--out", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out
    report = json.loads((tmp_path / "tiny_verify.json").read_text())
    assert report["passed"] is True


def test_verify_failure_exit(tmp_path, capsys):
    # a step 40x past 1/L blows the loss up past the divergence guard
    text = SMALL.replace('methods = ["gd", "altgd", "nag"]', "methods = nag") + \
        "\n[hyper]\nstep_rule = scaled\neta = 40.0\nbeta = 0.5\n"
    assert main(["verify", write(tmp_path, text), "--out", str(tmp_path)]) == EXIT_VERIFY
    assert "FAIL" in capsys.readouterr().out


def test_exact_warm_start_diagnostics_zero():
    from dataclasses import replace

    from lowrank.init import FactorizationProblem, InitConfig, initialize
    from lowrank.optim import HyperParams, StopRule, run

    A = np.zeros((4, 3))
    A[0, 0], A[1, 1] = 2.0, 1.0
    problem = FactorizationProblem.from_matrix(A, 2)
    init = initialize(problem, InitConfig(d=2, c=1.0))
    exact = replace(init, X0=np.array([[2.0, 0], [0, 1.0], [0, 0], [0, 0]]), Y0=np.array([[1.0, 0], [0, 1.0], [0, 0]]))
    res = run(problem, exact, "gd", HyperParams(0.1, 0.0, 4.0, 1.0), StopRule(1e-8, 10), diagnostics="full")
    assert res.reason == "converged" and res.iterations == 0
    assert res.trace.resid_fro[0] == 0 and res.trace.leakage[0] == 0


def test_theory_subcommand(tmp_path, capsys):
    assert main(["theory", write(tmp_path, SMALL), "--out", str(tmp_path / "t")]) == EXIT_OK
    files = sorted((tmp_path / "t").iterdir())
    assert files
    for f in files:
        lines = f.read_text().split("\n")
        assert lines[0] == HEADER
        row = lines[1].split(",")
        assert row[7] != "" and row[4] == "" and row[10] == ""


def test_preset_subcommand(tmp_path, capsys):
    assert main(["preset", "fig2-mf", "--out", str(tmp_path)]) == EXIT_OK
    text = (tmp_path / "fig2-mf.cfg").read_text()
    assert parse_config(text) == preset("fig2-mf")
    with pytest.raises(SystemExit):
        main(["preset", "nonsense"])


def test_flag_overrides(tmp_path):
    cfg = write(tmp_path, SMALL)
    assert main(["run", cfg, "--seeds", "1", "--max-iters", "5", "--eps", "1e-3", "--out", str(tmp_path / "x"),
                 "--diagnostics", "full"]) == 0
    rows = list(csv.DictReader((tmp_path / "x" / "small_gd.csv").read_text().splitlines()))
    assert {r["seed"] for r in rows} == {"0"}
    assert int(rows[-1]["iter"]) <= 5
    assert rows[0]["leakage"] != ""


def test_console_script(tmp_path):
    env = dict(os.environ, LOWRANK_THREADS="2")
    out = subprocess.run([sys.executable, "-m", "lowrank.experiments.cli", "preset", "tiny", "--out", str(tmp_path)],
                         capture_output=True, text=True, env=env)
    assert out.returncode == 0 and Path(out.stdout.strip()).is_file()
    assert serialize(preset("tiny")) == Path(out.stdout.strip()).read_text()
