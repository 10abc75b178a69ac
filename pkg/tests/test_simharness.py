import csv
import json

import numpy as np
import pytest

from pkfilter import construct, simharness
from pkfilter.simharness import ConfigError, ExperimentConfig, Series, TrialRecord


def _small(**kw):
    base = dict(sweep="k", grid=(5,), n=120, p=30, k=5, trials=6, seed=3,
                series=("orthogonal:W2", "general:W1:m=2"))
    base.update(kw)
    return ExperimentConfig(**base)


def test_series_parse():
    s = Series.parse("general:W2:m=5")
    assert (s.method, s.kind, s.m) == ("general", "W2", 5)
    assert s.label == "GPK(m=5)-W2"
    assert Series.parse("orthogonal").kind == "W2"
    assert Series.parse("block_diagonal").kind == "W1"
    assert Series.parse("block_diagonal:group=4").group_size == 4
    assert Series.parse(s.spec()) == s
    for bad in ("nope:W1", "general:W9", "general:lasso_signmax", "general:m=x", "general:foo=2"):
        with pytest.raises(ConfigError):
            Series.parse(bad)


def test_config_validation():
    with pytest.raises(ConfigError):
        _small(sweep="n")
    with pytest.raises(ConfigError):
        _small(grid=())
    with pytest.raises(ConfigError):
        _small(n=60)
    with pytest.raises(ConfigError):
        _small(grid=(40,))
    with pytest.raises(ConfigError):
        _small(series=("general:W1", "general:W1:m=2"))


def test_scale_sweep_keeps_ratios():
    cfg = simharness.preset("d")
    for i, ell in enumerate(cfg.grid):
        pt = cfg.point(i)
        assert (pt["n"], pt["p"], pt["k"]) == (150 * ell, 50 * ell, 10 * ell)


def test_presets():
    for name in simharness.PRESETS:
        cfg = simharness.preset(name)
        assert cfg.name == name
        full = name.endswith("-full")
        if cfg.sweep != "scale":
            assert cfg.p == (500 if full else 100)
        comparison = name.startswith(("group", "decay", "precision"))
        assert cfg.amplitude == (5.0 if comparison else 3.5) or cfg.sweep == "amplitude"
    assert simharness.preset("a", trials=3).trials == 3
    with pytest.raises(ConfigError):
        simharness.preset("zz")


def test_ini_roundtrip():
    text = """
[experiment]
name = t
sweep = rho
grid = 0.0, 0.5
trials = 4
seed = 9
[data]
covariance = ar
n = 120
p = 30
k = 3
freeze_support = yes
[construct]
series = orthogonal:W2,
         knockoff_sdp:lasso_signmax
[stats]
mu = 0.5
"""
    cfg = simharness.config_from_ini(text)
    assert cfg.grid == (0.0, 0.5) and cfg.covariance == "ar" and cfg.freeze_support
    assert [s.label for s in cfg.series] == ["OPK-W2", "KF-SDP-lasso_signmax"]
    assert cfg.mu == 0.5
    base = simharness.preset("c")
    over = simharness.config_from_ini("[experiment]\ntrials = 7\n", base)
    assert over.trials == 7 and over.grid == base.grid


@pytest.mark.parametrize("text,needle", [
    ("[bogus]\nx = 1\n", "bogus"),
    ("[data]\nn = many\n", "[data] n"),
    ("[data]\nwidth = 3\n", "width"),
    ("[experiment]\nsweep = n\n", "sweep"),
    ("no section\n", "parse"),
])
def test_ini_errors(text, needle):
    with pytest.raises(ConfigError) as info:
        simharness.config_from_ini(text)
    assert needle in str(info.value)


def test_run_is_deterministic_and_worker_invariant():
    cfg = _small()
    a = simharness.run_experiment(cfg, n_jobs=1)
    b = simharness.run_experiment(cfg, n_jobs=2, chunk=2)
    assert [r.row() for r in a.records] == [r.row() for r in b.records]
    assert len(a.records) == 12 and a.ok


def test_paired_series_share_data():
    res = simharness.run_experiment(_small(trials=3))
    by = {}
    for r in res.records:
        by.setdefault(r.trial, set()).add((r.seed, r.lam))
    assert all(len({s for s, _ in v}) == 1 for v in by.values())


def test_k_zero_single_trial():
    res = simharness.run_experiment(_small(grid=(0,), trials=1))
    for r in res.records:
        assert r.power == 0.0
        assert r.fdp == 0.0 or r.n_selected > 0


def test_frozen_support():
    res = simharness.run_experiment(_small(trials=3, freeze_support=True, series=("orthogonal:W2",)))
    assert res.ok


def test_construction_failure_marks_point(monkeypatch):
    real = construct.construct

    def flaky(X, method, **kw):
        if method == "general":
            raise construct.ConstructionError("boom")
        return real(X, method, **kw)

    monkeypatch.setattr(construct, "construct", flaky)
    res = simharness.run_experiment(_small(trials=2))
    assert len(res.failed_points) == 1 and "boom" in res.failed_points[0]["error"]
    bad = [r for r in res.records if r.method == "general"]
    assert all(r.status == "construction_failed" for r in bad)
    row = [s for s in res.summary if s["method"] == "general"][0]
    assert row["n_trials"] == 0 and row["n_failed"] == 2
    assert not res.ok


def _rec(fdp, power=0.0, ratio=0.0, trial=0, series="A", status="ok"):
    return TrialRecord(grid_index=0, grid_value=1.0, series=series, method="general", kind="W1",
                       trial=trial, seed=0, status=status, fdp=fdp, power=power, ratio_stat=ratio)


def test_summarize_examples():
    row = simharness.summarize([_rec(0.3, 0.5, 2.0)])[0]
    assert (row["fdr"], row["fdr_se"], row["power"], row["ratio"]) == (0.3, 0.0, 0.5, 2.0)
    row = simharness.summarize([_rec(0.0), _rec(1.0, trial=1)])[0]
    assert row["fdr"] == 0.5
    rng = np.random.default_rng(0)
    vals = rng.random(200)
    recs = [_rec(v, 1 - v, 2 * v, trial=i) for i, v in enumerate(vals)]
    recs.append(_rec(float("nan"), trial=200, status="failed"))
    row = simharness.summarize(recs)[0]
    se = vals.std(ddof=1) / np.sqrt(200)
    assert row["n_trials"] == 200 and row["n_failed"] == 1
    assert row["fdr"] == pytest.approx(vals.mean()) and row["fdr_se"] == pytest.approx(se)
    assert row["power"] == pytest.approx(1 - vals.mean())
    assert row["ratio"] == pytest.approx(2 * vals.mean()) and row["ratio_se"] == pytest.approx(2 * se)


def test_paired_difference():
    recs = [_rec(0, power=p, trial=i, series="A") for i, p in enumerate([1.0, 0.5, 0.5])]
    recs += [_rec(0, power=p, trial=i, series="B") for i, p in enumerate([0.5, 0.5, 0.0])]
    mean, se = simharness.paired_difference(recs, "A", "B")
    assert mean == pytest.approx(1 / 3)
    assert se == pytest.approx(np.std([0.5, 0.0, 0.5], ddof=1) / np.sqrt(3))


def test_write_outputs(tmp_path):
    res = simharness.run_experiment(_small(trials=2))
    simharness.write_outputs(res, tmp_path)
    with open(tmp_path / "trials.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == simharness.TRIAL_COLUMNS
    assert len(rows) == 1 + len(res.records)
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert doc["schema_version"] == simharness.SCHEMA_VERSION
    assert doc["config"]["series"] == ["orthogonal:W2", "general:W1:m=2"]
    for metric in simharness.METRICS:
        with open(tmp_path / "plotdata" / f"{metric}.csv") as fh:
            plot = list(csv.DictReader(fh))
        assert {r["series"] for r in plot} == {"OPK-W2", "GPK(m=2)-W1"}
        assert all(r["schema_version"] == "1" for r in plot)


def test_desk_default_fdr():
    cfg = ExperimentConfig(sweep="k", grid=(10,), series=("general:W1:m=2",), trials=200, seed=0)
    row = simharness.run_experiment(cfg, n_jobs=-1).summary[0]
    assert row["n_trials"] == 200
    assert row["fdr"] <= 0.25
    assert row["ratio"] <= 1.1


def test_record_integrality():
    cfg = _small(trials=5, grid=(5,))
    for r in simharness.run_experiment(cfg).records:
        assert float(r.fdp * max(r.n_selected, 1)).is_integer()
        assert abs(r.power * 5 - round(r.power * 5)) < 1e-12
        assert r.n_false + r.n_true == r.n_selected
