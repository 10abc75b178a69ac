"""Seeded simulation sweeps: FDR, power and the null ratio expectation.

One setting is varied over a grid while the rest stay at their defaults.  At
each grid point the design ``X`` and every (pseudo-)knockoff matrix are built
once; each trial redraws the signal and the noise, and every series sees the
same ``(X, beta, y)`` so series can be compared pairwise.

Seeds: grid point ``g`` uses ``derive_seed(seed, g)``; trial ``r`` at that
point uses ``derive_seed(seed, g, r)``.  Results do not depend on the number
of workers.
"""
from __future__ import annotations

import configparser
import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from joblib import Parallel, delayed

from . import construct, numerics, stats
from .datagen import CovarianceModel, derive_seed, sample_design, sample_response, sample_signal
from .select import evaluate

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SWEEPS = ("k", "amplitude", "rho", "gamma", "scale")
METRICS = ("fdr", "power", "ratio")
TRIAL_COLUMNS = ("schema_version", "grid_index", "grid_value", "series", "method", "kind",
                 "trial", "seed", "status", "T", "n_selected", "n_false", "n_true", "fdp",
                 "power", "ratio_stat", "lam", "sweeps", "error")

_SHORT = {"orthogonal": "OPK", "block_diagonal": "BDPK", "general": "GPK",
          "knockoff_equi": "KF-EQUI", "knockoff_sdp": "KF-SDP"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Series:
    """One (construction, statistic) pair evaluated in an experiment."""

    method: str
    kind: str
    m: int = 2
    group_size: int = 5

    def __post_init__(self):
        if self.method not in construct.METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.kind not in stats.KINDS:
            raise ConfigError(f"unknown statistic kind {self.kind!r}")
        if self.kind == "lasso_signmax" and not self.method.startswith("knockoff"):
            raise ConfigError("lasso_signmax needs a knockoff construction")

    @property
    def label(self):
        name = _SHORT[self.method]
        if self.method == "general":
            name += f"(m={self.m})"
        return f"{name}-{self.kind}"

    @property
    def construction_key(self):
        return (self.method, self.m if self.method == "general" else 0,
                self.group_size if self.method == "block_diagonal" else 0)

    @classmethod
    def parse(cls, text):
        """``method[:kind][:m=M][:group=G]``; the kind defaults to W2 for orthogonal, else W1."""
        parts = [t.strip() for t in text.strip().split(":") if t.strip()]
        if not parts:
            raise ConfigError("empty series specification")
        method = parts[0]
        kind = None
        opts = {}
        for tok in parts[1:]:
            if "=" in tok:
                key, val = (s.strip() for s in tok.split("=", 1))
                if key not in ("m", "group"):
                    raise ConfigError(f"unknown series option {key!r} in {text!r}")
                try:
                    opts["m" if key == "m" else "group_size"] = int(val)
                except ValueError:
                    raise ConfigError(f"series option {key} must be an integer in {text!r}") from None
            else:
                kind = tok
        if kind is None:
            kind = default_kind(method)
        return cls(method=method, kind=kind, **opts)

    def spec(self):
        out = f"{self.method}:{self.kind}"
        if self.method == "general":
            out += f":m={self.m}"
        if self.method == "block_diagonal":
            out += f":group={self.group_size}"
        return out


def default_kind(method):
    return "W2" if method == "orthogonal" else "W1"


@dataclass
class ExperimentConfig:
    """A one-variable sweep.

    ``sweep`` is one of ``k``, ``amplitude``, ``rho``, ``gamma`` or ``scale``
    (``n = 150 l``, ``p = 50 l``, ``k = 10 l``).
    """

    name: str = "experiment"
    sweep: str = "k"
    grid: tuple = (10,)
    covariance: str = "identity"
    n: int = 300
    p: int = 100
    k: int = 10
    amplitude: float = 3.5
    rho: float = 0.0
    gamma: float = 0.0
    group_size: int = 5
    block_size: int = 5
    series: tuple = (Series("general", "W1", m=2),)
    q: float = 0.2
    trials: int = 200
    seed: int = 0
    mu: float = 0.75
    floor: float = 2.0
    mask_floor: float = 0.001
    freeze_support: bool = False

    def __post_init__(self):
        self.grid = tuple(self.grid)
        self.series = tuple(Series.parse(s) if isinstance(s, str) else s for s in self.series)
        self.validate()

    def validate(self):
        if self.sweep not in SWEEPS:
            raise ConfigError(f"sweep must be one of {SWEEPS}, got {self.sweep!r}")
        if not self.grid:
            raise ConfigError("grid must not be empty")
        if not self.series:
            raise ConfigError("at least one series is required")
        if not 0 < self.q < 1:
            raise ConfigError("q must lie in (0, 1)")
        if self.trials < 1:
            raise ConfigError("trials must be positive")
        labels = [s.label for s in self.series]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate series {labels}")
        for i in range(len(self.grid)):
            pt = self.point(i)
            if pt["n"] <= 2 * pt["p"]:
                raise ConfigError(f"grid point {self.grid[i]}: need n > 2p (n={pt['n']}, p={pt['p']})")
            if not 0 <= pt["k"] <= pt["p"]:
                raise ConfigError(f"grid point {self.grid[i]}: need 0 <= k <= p")

    def point(self, index):
        """Settings at grid point ``index``."""
        v = self.grid[index]
        pt = {"n": self.n, "p": self.p, "k": self.k, "amplitude": self.amplitude,
              "rho": self.rho, "gamma": self.gamma}
        if self.sweep == "scale":
            ell = int(v)
            pt.update(n=150 * ell, p=50 * ell, k=10 * ell)
        elif self.sweep == "k":
            pt["k"] = int(v)
        else:
            pt[self.sweep] = float(v)
        return pt

    def covariance_model(self, pt):
        return CovarianceModel(self.covariance, pt["p"], rho=pt["rho"], gamma=pt["gamma"],
                               group_size=self.group_size, block_size=self.block_size)

    def to_dict(self):
        d = asdict(self)
        d["grid"] = list(self.grid)
        d["series"] = [s.spec() for s in self.series]
        return d


@dataclass
class TrialRecord:
    grid_index: int
    grid_value: float
    series: str
    method: str
    kind: str
    trial: int
    seed: int
    status: str = "ok"
    T: float = math.inf
    n_selected: int = 0
    n_false: int = 0
    n_true: int = 0
    fdp: float = float("nan")
    power: float = float("nan")
    ratio_stat: float = float("nan")
    lam: float = float("nan")
    sweeps: int = 0
    error: str = ""

    def row(self):
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return [d[c] for c in TRIAL_COLUMNS]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    summary: list
    failed_points: list = field(default_factory=list)

    @property
    def n_failed_trials(self):
        return sum(r.status != "ok" for r in self.records)

    @property
    def ok(self):
        return not self.failed_points and self.n_failed_trials == 0


# ---------------------------------------------------------------------------
# presets

def _fdr_series():
    return (Series("orthogonal", "W2"), Series("general", "W1", m=2), Series("block_diagonal", "W1"))


def _comparison_series():
    return (Series("orthogonal", "W2"), Series("general", "W1", m=5), Series("general", "W2", m=5),
            Series("knockoff_sdp", "W1"), Series("knockoff_sdp", "lasso_signmax"))


def _desk(**kw):
    base = dict(n=300, p=100, k=10, trials=200, series=_fdr_series())
    base.update(kw)
    return base


def _full(**kw):
    base = dict(n=1500, p=500, k=30, trials=200, series=_fdr_series())
    base.update(kw)
    return base


_RHO_FINE = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
_RHO_TENTHS = tuple(round(0.1 * i, 1) for i in range(10))

PRESETS = {
    "a": _desk(sweep="k", grid=(5, 10, 20)),
    "b": _desk(sweep="amplitude", grid=(2.8, 3.2, 3.6, 4.0)),
    "c": _desk(sweep="rho", covariance="ar", grid=(0.0, 0.5, 0.9)),
    "d": _desk(sweep="scale", grid=(1, 2, 3)),
    "e": _desk(sweep="rho", covariance="group", gamma=0.0, grid=(0.5, 0.9)),
    "f": _desk(sweep="gamma", covariance="group", rho=0.5, grid=(0.0, 0.5, 0.9)),
    "group": _desk(sweep="rho", covariance="group", amplitude=5.0, grid=(0.5, 0.7, 0.9),
                   series=_comparison_series()),
    "decay": _desk(sweep="rho", covariance="ar", amplitude=5.0, grid=(0.5, 0.7, 0.9),
                   series=_comparison_series()),
    "precision-a": _desk(sweep="rho", covariance="precision_a", amplitude=5.0, grid=(0.5, 0.7, 0.9),
                         series=_comparison_series()),
    "precision-b": _desk(sweep="rho", covariance="precision_b", amplitude=5.0, grid=(0.5, 0.7, 0.9),
                         series=_comparison_series()),
    "precision-c": _desk(sweep="rho", covariance="precision_c", amplitude=5.0, grid=(0.0, 0.3, 0.6, 0.9),
                         series=_comparison_series() + (Series("orthogonal", "least_squares"),)),
    "a-full": _full(sweep="k", grid=tuple(range(10, 101, 10))),
    "b-full": _full(sweep="amplitude", grid=tuple(round(2.8 + 0.1 * i, 1) for i in range(15))),
    "c-full": _full(sweep="rho", covariance="ar", grid=_RHO_TENTHS),
    "d-full": _full(sweep="scale", grid=tuple(range(2, 13))),
    "e-full": _full(sweep="rho", covariance="group", gamma=0.0, grid=_RHO_TENTHS),
    "f-full": _full(sweep="gamma", covariance="group", rho=0.5, grid=_RHO_TENTHS),
    "group-full": _full(sweep="rho", covariance="group", amplitude=5.0, grid=_RHO_FINE,
                        series=_comparison_series()),
    "decay-full": _full(sweep="rho", covariance="ar", amplitude=5.0, grid=_RHO_FINE,
                        series=_comparison_series()),
    "precision-a-full": _full(sweep="rho", covariance="precision_a", amplitude=5.0, grid=_RHO_FINE,
                              series=_comparison_series()),
    "precision-b-full": _full(sweep="rho", covariance="precision_b", amplitude=5.0, grid=_RHO_FINE,
                              series=_comparison_series()),
    "precision-c-full": _full(sweep="rho", covariance="precision_c", amplitude=5.0, grid=_RHO_TENTHS,
                              series=_comparison_series() + (Series("orthogonal", "least_squares"),)),
}


def preset(name, **overrides):
    """An :class:`ExperimentConfig` for a named preset, with optional overrides."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    params = dict(PRESETS[name])
    params["name"] = name
    params.update(overrides)
    return ExperimentConfig(**params)


# ---------------------------------------------------------------------------
# config files

_INI_KEYS = {
    "experiment": {"name": str, "sweep": str, "grid": "floats", "trials": int, "seed": int, "q": float},
    "data": {"covariance": str, "n": int, "p": int, "k": int, "amplitude": float, "rho": float,
             "gamma": float, "group_size": int, "block_size": int, "freeze_support": bool},
    "construct": {"series": "series", "floor": float},
    "stats": {"mu": float, "mask_floor": float},
}


def config_from_ini(text, base: ExperimentConfig | None = None):
    """Parse an INI-style config (sections experiment, data, construct, stats).

    ``base`` supplies defaults (e.g. a preset); unknown sections or keys and
    malformed values raise :class:`ConfigError` naming the section and key.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    params = {} if base is None else base.to_dict()
    for section in parser.sections():
        if section not in _INI_KEYS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _INI_KEYS[section]:
                raise ConfigError(f"[{section}] unknown key {key!r}")
            typ = _INI_KEYS[section][key]
            try:
                if typ == "floats":
                    val = tuple(float(v) for v in raw.replace(",", " ").split())
                elif typ == "series":
                    val = tuple(Series.parse(v) for v in raw.replace("\n", ",").split(",") if v.strip())
                elif typ is bool:
                    val = parser.getboolean(section, key)
                else:
                    val = typ(raw.strip())
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None
            params[key] = val
    try:
        return ExperimentConfig(**params)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, base=None):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_ini(text, base)


# ---------------------------------------------------------------------------
# running

@dataclass
class _Prepared:
    pk: construct.PseudoKnockoff
    factor: stats.SplitFactor


def _prepare_point(config: ExperimentConfig, gi):
    pt = config.point(gi)
    gseed = derive_seed(config.seed, gi)
    design = sample_design(config.covariance_model(pt), pt["n"], seed=gseed)
    prepared = {}
    errors = {}
    for s in config.series:
        key = s.construction_key
        if key in prepared or key in errors:
            continue
        try:
            pk = construct.construct(design, s.method, seed=gseed, group_size=s.group_size, m=s.m,
                                     floor=config.floor)
            prepared[key] = _Prepared(pk, stats.SplitFactor(design.X, pk.Xt))
        except (construct.ConstructionError, np.linalg.LinAlgError, ValueError) as exc:
            errors[key] = f"{type(exc).__name__}: {exc}"
            log.warning("grid point %s: %s construction failed: %s", config.grid[gi], s.method, exc)
    return pt, design, prepared, errors


def _run_trials(config: ExperimentConfig, gi, pt, X, prepared, errors, trial_ids):
    out = []
    frozen = None
    if config.freeze_support:
        frozen = sample_signal(pt["p"], pt["k"], pt["amplitude"], derive_seed(config.seed, gi)).support
    for r in trial_ids:
        tseed = derive_seed(config.seed, gi, r)
        signal = sample_signal(pt["p"], pt["k"], pt["amplitude"], tseed, support=frozen)
        y = sample_response(X, signal.beta, tseed)
        for s in config.series:
            rec = TrialRecord(grid_index=gi, grid_value=float(config.grid[gi]), series=s.label,
                              method=s.method, kind=s.kind, trial=r, seed=int(tseed))
            key = s.construction_key
            if key in errors:
                rec.status = "construction_failed"
                rec.error = errors[key]
                out.append(rec)
                continue
            prep = prepared[key]
            try:
                st = stats.compute_statistic(s.kind, prep.factor, X, prep.pk.Xt, y, mu=config.mu,
                                             s=prep.pk.s, mask_floor=config.mask_floor)
            except (stats.LassoConvergenceError, np.linalg.LinAlgError) as exc:
                rec.status = "failed"
                rec.error = f"{type(exc).__name__}: {exc}"
                out.append(rec)
                continue
            res = evaluate(st.W, signal.beta, q=config.q)
            sel = np.zeros(pt["p"], dtype=bool)
            sel[res.selected] = True
            rec.T = float(res.T)
            rec.n_selected = res.n_selected
            rec.n_false = int(np.sum(sel & (signal.beta == 0)))
            rec.n_true = int(np.sum(sel & (signal.beta != 0)))
            rec.fdp, rec.power, rec.ratio_stat = res.fdp, res.power, res.ratio_stat
            rec.lam, rec.sweeps = st.lam, st.sweeps
            out.append(rec)
    return out


def run_experiment(config: ExperimentConfig, n_jobs=1, chunk=25):
    """Run every grid point and trial; returns an :class:`ExperimentResult`."""
    records = []
    failed_points = []
    for gi in range(len(config.grid)):
        try:
            pt, design, prepared, errors = _prepare_point(config, gi)
        except (ValueError, np.linalg.LinAlgError) as exc:
            failed_points.append({"grid_index": gi, "grid_value": config.grid[gi], "error": str(exc)})
            log.warning("grid point %s failed: %s", config.grid[gi], exc)
            continue
        for key, err in errors.items():
            failed_points.append({"grid_index": gi, "grid_value": config.grid[gi],
                                  "construction": list(key), "error": err})
        ids = list(range(config.trials))
        batches = [ids[i:i + chunk] for i in range(0, len(ids), chunk)]
        if n_jobs == 1 or len(batches) == 1:
            parts = [_run_trials(config, gi, pt, design.X, prepared, errors, b) for b in batches]
        else:
            parts = Parallel(n_jobs=n_jobs)(
                delayed(_run_trials)(config, gi, pt, design.X, prepared, errors, b) for b in batches
            )
        for part in parts:
            records.extend(part)
    return ExperimentResult(config=config, records=records, summary=summarize(records),
                            failed_points=failed_points)


# ---------------------------------------------------------------------------
# aggregation and output

def _mean_se(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


def summarize(records):
    """Means and standard errors per (grid point, series); failed trials are counted, not averaged."""
    groups = {}
    for r in records:
        groups.setdefault((r.grid_index, r.series), []).append(r)
    out = []
    for (gi, label), recs in sorted(groups.items(), key=lambda kv: kv[0]):
        ok = [r for r in recs if r.status == "ok"]
        row = {"grid_index": gi, "grid_value": recs[0].grid_value, "series": label,
               "method": recs[0].method, "kind": recs[0].kind,
               "n_trials": len(ok), "n_failed": len(recs) - len(ok)}
        for metric, attr in (("fdr", "fdp"), ("power", "power"), ("ratio", "ratio_stat")):
            row[metric], row[f"{metric}_se"] = _mean_se([getattr(r, attr) for r in ok])
        out.append(row)
    return out


def paired_difference(records, series_a, series_b, metric="power", grid_index=None):
    """Mean and SE of ``metric(a) - metric(b)`` over trials where both succeeded."""
    attr = {"fdr": "fdp", "power": "power", "ratio": "ratio_stat"}[metric]
    a = {}
    b = {}
    for r in records:
        if r.status != "ok" or (grid_index is not None and r.grid_index != grid_index):
            continue
        if r.series == series_a:
            a[(r.grid_index, r.trial)] = getattr(r, attr)
        elif r.series == series_b:
            b[(r.grid_index, r.trial)] = getattr(r, attr)
    keys = sorted(set(a) & set(b))
    return _mean_se([a[k] - b[k] for k in keys])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_outputs(result: ExperimentResult, out_dir):
    """Write ``trials.csv``, ``summary.json`` and ``plotdata/<metric>.csv`` under ``out_dir``."""
    os.makedirs(os.path.join(out_dir, "plotdata"), exist_ok=True)
    with open(os.path.join(out_dir, "trials.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_COLUMNS)
        for r in result.records:
            w.writerow([_fmt(v) for v in r.row()])
    summary = {
        "schema_version": SCHEMA_VERSION,
        "config": result.config.to_dict(),
        "n_records": len(result.records),
        "n_failed_trials": result.n_failed_trials,
        "failed_points": result.failed_points,
        "points": result.summary,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=False, default=_json_default)
        fh.write("\n")
    for metric in METRICS:
        with open(os.path.join(out_dir, "plotdata", f"{metric}.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["schema_version", "grid_value", "series", "mean", "se"])
            for row in result.summary:
                w.writerow([SCHEMA_VERSION, _fmt(row["grid_value"]), row["series"],
                            _fmt(row[metric]), _fmt(row[f"{metric}_se"])])


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")
