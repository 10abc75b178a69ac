import json

import numpy as np
import pytest

from pkfilter import cli, theory
from pkfilter.datagen import CovarianceModel, sample_design, sample_response, sample_signal

MINI = """
[experiment]
name = mini
sweep = k
grid = 3
trials = 4
seed = 5
[data]
n = 90
p = 20
[construct]
series = orthogonal:W2, general:W1:m=2
"""


def _write_data(tmp_path, k, amplitude, seed, p=50, n=200, fmt="csv"):
    d = sample_design(CovarianceModel("identity", p), n, seed=seed)
    sig = sample_signal(p, k, amplitude, seed=seed + 1000)
    y = sample_response(d.X, sig.beta, seed=seed + 2000)
    if fmt == "csv":
        np.savetxt(tmp_path / "X.csv", d.X, delimiter=",")
        np.savetxt(tmp_path / "y.csv", y)
        return str(tmp_path / "X.csv"), str(tmp_path / "y.csv"), sig
    cli.write_bin(tmp_path / "X.bin", d.X)
    np.save(tmp_path / "y.npy", y)
    return str(tmp_path / "X.bin"), str(tmp_path / "y.npy"), sig


def _selected(out):
    line = [ln for ln in out.splitlines() if ln.startswith("selected:")][0]
    return {int(v) for v in line.split(":")[1].split()}


def test_run_minimal_config(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text(MINI)
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "a"), "--jobs", "1"]) == 0
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "b"), "--jobs", "2"]) == 0
    a = (tmp_path / "a" / "trials.csv").read_bytes()
    assert a == (tmp_path / "b" / "trials.csv").read_bytes()
    assert a.splitlines()[0].decode() == ",".join(cli.simharness.TRIAL_COLUMNS)
    for metric in ("fdr", "power", "ratio"):
        lines = (tmp_path / "a" / "plotdata" / f"{metric}.csv").read_text().splitlines()
        assert lines[0] == "schema_version,grid_value,series,mean,se"
        assert len(lines) == 3


def test_run_seed_override_and_trials(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(MINI)
    out = tmp_path / "s"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--seed", "11", "--trials", "2"]) == 0
    doc = json.loads((out / "summary.json").read_text())
    assert doc["config"]["seed"] == 11 and doc["config"]["trials"] == 2


def test_run_bad_config(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[data]\np = ten\n")
    assert cli.main(["run", "--config", str(cfg)]) == 1
    assert "[data] p" in capsys.readouterr().err
    assert cli.main(["run"]) == 1
    assert cli.main(["run", "--config", str(tmp_path / "missing.ini")]) == 1


def test_run_partial_failure_exit_code(tmp_path, monkeypatch):
    cfg = tmp_path / "c.ini"
    cfg.write_text(MINI)

    def broken(*a, **kw):
        raise cli.construct.ConstructionError("nope")

    monkeypatch.setattr(cli.construct, "construct", broken)
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert (tmp_path / "o" / "summary.json").exists()


def test_usage_errors():
    assert cli.main([]) == 1
    assert cli.main(["frobnicate"]) == 1
    assert cli.main(["--help"]) == 0


def test_filter_null_data(tmp_path, capsys):
    X, y, _ = _write_data(tmp_path, 0, 0.0, seed=1)
    assert cli.main(["filter", X, y]) == 0
    out = capsys.readouterr().out
    assert out.startswith("selected:")
    assert "T:" in out and "lambda:" in out


def test_filter_binary_formats(tmp_path, capsys):
    X, y, sig = _write_data(tmp_path, 5, 10.0, seed=2, fmt="bin")
    assert cli.main(["filter", X, y, "--method", "orthogonal"]) == 0
    assert set((sig.support + 1).tolist()) <= _selected(capsys.readouterr().out)
    assert np.array_equal(cli.read_matrix(X).shape, (200, 50))


def test_filter_planted_signals(tmp_path, capsys):
    hits = 0
    for seed in range(20):
        X, y, sig = _write_data(tmp_path, 5, 10.0, seed=seed)
        assert cli.main(["filter", X, y]) == 0
        hits += set((sig.support + 1).tolist()) <= _selected(capsys.readouterr().out)
    assert hits >= 18


def test_filter_input_errors(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3,oops\n")
    X, y, _ = _write_data(tmp_path, 0, 0.0, seed=3)
    assert cli.main(["filter", str(bad), y]) == 1
    captured = capsys.readouterr()
    assert captured.out == "" and "bad.csv:2" in captured.err
    wide = tmp_path / "wide.csv"
    np.savetxt(wide, np.random.default_rng(0).standard_normal((200, 120)), delimiter=",")
    assert cli.main(["filter", str(wide), y]) == 1
    assert "n > 2p" in capsys.readouterr().err
    Xm = np.loadtxt(X, delimiter=",")
    Xm[:, 1] = Xm[:, 0]
    dup = tmp_path / "dup.csv"
    np.savetxt(dup, Xm, delimiter=",")
    assert cli.main(["filter", str(dup), y]) == 1
    assert capsys.readouterr().out == ""
    trunc = tmp_path / "t.bin"
    trunc.write_bytes(np.array([10, 3], dtype="<u8").tobytes() + b"\0" * 16)
    with pytest.raises(cli.InputError):
        cli.read_matrix(str(trunc))


def test_verify_mc(tmp_path, capsys):
    assert cli.main(["verify-mc", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "verify-mc.json").read_text())
    assert doc["passed"] and doc["schema_version"] == 1
    for c in doc["checks"]:
        assert {"check", "value", "bound", "margin", "passed"} <= set(c)


def test_construct_check(capsys):
    assert cli.main(["construct-check"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["checks"]) == 15
    assert all(c["value"] <= 1e-8 for c in doc["checks"])


def test_verify_bounds_exit_code_follows_certificate(monkeypatch, capsys):
    real = theory.sup_bound_pipeline
    coarse = theory.BoundPlan(t_step=1.0)
    monkeypatch.setattr(theory, "sup_bound_pipeline", lambda **kw: real(coarse, **kw))
    code = cli.main(["verify-bounds", "--jobs", "1"])
    doc = json.loads(capsys.readouterr().out)
    const = doc["certificate"]["constant"]
    assert doc["checks"][0]["value"] == const
    assert code == (0 if const <= 3.9 else 3)
