"""Command-line entry point.

Exit codes: 0 success, 1 usage or input error, 2 an experiment finished with
failed grid points or trials, 3 a verification check failed.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import construct, simharness, stats, theory
from .datagen import CovarianceModel, DesignEnsemble, sample_design
from .select import select

EXIT_OK, EXIT_INPUT, EXIT_PARTIAL, EXIT_VERIFY = 0, 1, 2, 3

log = logging.getLogger("pkfilter")


class InputError(ValueError):
    pass


# ---------------------------------------------------------------------------
# matrix input

BIN_HEADER = np.dtype([("n", "<u8"), ("p", "<u8")])


def read_matrix(path):
    """Read a dense matrix from ``.csv``, ``.npy`` or ``.bin``.

    ``.bin`` layout: two little-endian uint64 values ``n`` and ``p`` followed
    by ``n * p`` little-endian float64 values in row-major order.  CSV files
    hold numbers only (no header); a one-column file or a single row is read
    as a vector.
    """
    ext = os.path.splitext(path)[1].lower()
    try:
        if ext == ".npy":
            arr = np.load(path, allow_pickle=False)
        elif ext == ".bin":
            with open(path, "rb") as fh:
                raw = fh.read()
            if len(raw) < BIN_HEADER.itemsize:
                raise InputError(f"{path}: truncated header")
            hdr = np.frombuffer(raw[:BIN_HEADER.itemsize], dtype=BIN_HEADER)[0]
            n, p = int(hdr["n"]), int(hdr["p"])
            body = raw[BIN_HEADER.itemsize:]
            if len(body) != 8 * n * p:
                raise InputError(f"{path}: expected {n * p} float64 values, found {len(body) / 8:g}")
            arr = np.frombuffer(body, dtype="<f8").reshape(n, p).copy()
        else:
            arr = _read_csv(path)
    except InputError:
        raise
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{path}: non-finite values")
    return arr


def _read_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-numeric entry") from None
    if not rows:
        raise InputError(f"{path}: empty file")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise InputError(f"{path}: rows have unequal lengths")
    return np.array(rows)


def write_bin(path, X):
    """Write ``X`` in the ``.bin`` layout read by :func:`read_matrix`."""
    X = np.ascontiguousarray(X, dtype="<f8")
    n, p = X.shape
    with open(path, "wb") as fh:
        fh.write(np.array([(n, p)], dtype=BIN_HEADER).tobytes())
        fh.write(X.tobytes())


# ---------------------------------------------------------------------------
# subcommands

def cmd_run(args):
    try:
        base = simharness.preset(args.preset) if args.preset else None
        if args.config:
            cfg = simharness.load_config(args.config, base)
        elif base is not None:
            cfg = base
        else:
            raise simharness.ConfigError("run needs --config or --preset")
        if args.seed is not None:
            cfg = simharness.ExperimentConfig(**{**cfg.to_dict(), "seed": args.seed})
        if args.trials is not None:
            cfg = simharness.ExperimentConfig(**{**cfg.to_dict(), "trials": args.trials})
    except simharness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out = args.out or os.path.join("results", cfg.name)
    _ensure_dir(out)
    t0 = time.perf_counter()
    result = simharness.run_experiment(cfg, n_jobs=args.jobs)
    simharness.write_outputs(result, out)
    log.info("%s: %d records in %.1fs -> %s", cfg.name, len(result.records), time.perf_counter() - t0, out)
    for row in result.summary:
        print(f"{row['grid_value']:>8g}  {row['series']:<24} fdr {row['fdr']:.3f}±{row['fdr_se']:.3f}  "
              f"power {row['power']:.3f}±{row['power_se']:.3f}  ratio {row['ratio']:.3f}±{row['ratio_se']:.3f}")
    if not result.ok:
        print(f"{len(result.failed_points)} failed grid point(s), {result.n_failed_trials} failed trial(s)",
              file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_filter(args):
    try:
        X = read_matrix(args.X)
        y = read_matrix(args.y).ravel()
        if X.ndim != 2:
            raise InputError("X must be a matrix")
        n, p = X.shape
        if y.size != n:
            raise InputError(f"y has {y.size} entries, X has {n} rows")
        if n <= 2 * p:
            raise InputError(f"need n > 2p, got n={n}, p={p}")
        if args.kind == "lasso_signmax" and not args.method.startswith("knockoff"):
            raise InputError("lasso_signmax needs a knockoff method")
        seed = 0 if args.seed is None else args.seed
        design = DesignEnsemble.from_matrix(X, seed=seed, normalize=True)
        pk = construct.construct(design, args.method, seed=seed, m=args.m, group_size=args.group_size)
        factor = stats.SplitFactor(design.X, pk.Xt)
        kind = args.kind or simharness.default_kind(args.method)
        st = stats.compute_statistic(kind, factor, design.X, pk.Xt, y, mu=args.mu, s=pk.s)
    except (InputError, ValueError, np.linalg.LinAlgError, construct.ConstructionError,
            stats.LassoConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    res = select(st.W, args.q)
    print("selected: " + " ".join(str(int(j) + 1) for j in res.selected))
    print(f"T: {res.T!r}")
    print(f"lambda: {st.lam!r}")
    return EXIT_OK


def _check(name, value, bound, passed=None, kind="le", **extra):
    """One certificate entry; ``margin`` is positive when the check passes."""
    margin = bound - value if kind == "le" else value - bound
    if passed is None:
        passed = margin >= 0
    out = {"check": name, "value": value, "bound": bound, "margin": margin, "passed": bool(passed)}
    out.update(extra)
    return out


def verify_bounds(n_jobs=1):
    cert = theory.sup_bound_pipeline(n_jobs=n_jobs, keep_rows=False)
    checks = [
        _check("uniform_constant", cert["constant"], cert["target"]),
        _check("tail_ratio_grid", cert["max_tail_ratio_grid"], 1.0,
               passed=cert["max_tail_ratio_grid"] < 1.0),
        _check("tail_ratio_far", cert["tail_ratio_far"], 1.0, passed=cert["tail_ratio_far"] < 1.0),
    ]
    return checks, cert


def verify_mc(seed=0):
    checks = []
    est, se = theory.mc_fixed_t_expectation(theory.NullSignModel((2,)), 100_000, seed=seed)
    checks.append(_check("fixed_t_single_pair", abs(est - 0.75), 3 * se, estimate=est, se=se, target=0.75))
    est, se = theory.mc_fixed_t_expectation(theory.NullSignModel((40,) * 5), 100_000, seed=seed)
    checks.append(_check("fixed_t_5x40", est, 1 + 3 * se, se=se))
    est, se = theory.mc_sup_ratio(theory.NullSignModel((40,) * 5, "copies"), 10_000, seed=seed)
    checks.append(_check("sup_ratio_copies_5x40", est, 3.9 + 3 * se, se=se))
    est, se = theory.mc_sup_ratio(theory.NullSignModel((500,)), 10_000, seed=seed)
    checks.append(_check("sup_ratio_iid_500", est, 1.93 + 3 * se, se=se))
    for i, m, t in ((200, 1, 2.0), (50, 5, 1.5)):
        h = theory.mc_hoeffding_check(i, m, t, seed=seed)
        checks.append(_check(f"hoeffding_i{i}_m{m}_t{t:g}", h["freq"], h["bound"] + 3 * h["se"], se=h["se"]))
    for model, theta, t, i, j in ((theory.NullSignModel((10,) * 4, "copies"), 0.1, 2.0, 8, 20),
                                  (theory.NullSignModel((10,) * 4), 0.2, 2.0, 8, 40)):
        g = theory.mc_mgf_check(model, theta, t, i, j, seed=seed)
        checks.append(_check(f"mgf_{model.coupling}_i{i}_j{j}", g["empirical"],
                             g["bound"] * (1 + 5 * g["se_rel"]), se_rel=g["se_rel"]))
    viol = theory.lemma_cov_bound_check()
    checks.append(_check("covariance_lemma_max_violation", viol, 1e-12))
    err = orthant_quadrature_error()
    checks.append(_check("orthant_vs_quadrature", err, 1e-6))
    return checks


def orthant_quadrature_error(mus=(-0.9, -0.5, -0.1, 0.0, 0.3, 0.7, 0.95)):
    """Max |closed form - 2-D integration| of the positive-orthant probability."""
    from scipy.stats import multivariate_normal

    worst = 0.0
    for mu in mus:
        # P(Z1 > 0, Z2 > 0) = P(-Z1 < 0, -Z2 < 0) = CDF at the origin
        num = multivariate_normal(mean=[0, 0], cov=[[1, mu], [mu, 1]]).cdf([0, 0])
        worst = max(worst, abs(num - theory.orthant_prob(mu)))
    return float(worst)


CONSTRUCT_FIXTURES = (("identity", 0.0), ("ar", 0.5), ("group", 0.5))


def verify_construct(seed=0, p=60, n=200):
    checks = []
    for fi, (kind, rho) in enumerate(CONSTRUCT_FIXTURES):
        design = sample_design(CovarianceModel(kind, p, rho=rho), n, seed=seed + fi)
        for method in construct.METHODS:
            name = f"{method}@{kind}({rho:g})"
            try:
                pk = construct.construct(design, method, seed=seed)
                v = construct.validate_construction(pk, design.X)
            except (construct.ConstructionError, np.linalg.LinAlgError, ValueError) as exc:
                checks.append({"check": name, "value": None, "bound": None, "margin": None,
                               "passed": False, "error": str(exc)})
                continue
            worst = max(val for key, val in v.items()
                        if key not in ("tolerance", "passed", "b_inverse_rel") and not math.isnan(val))
            checks.append(_check(name, worst, v["tolerance"], passed=v["passed"],
                                 b_inverse_rel=v["b_inverse_rel"]))
    return checks


def _emit(which, checks, args, extra=None):
    passed = all(c["passed"] for c in checks)
    doc = {"schema_version": simharness.SCHEMA_VERSION, "verify": which, "passed": passed, "checks": checks}
    if extra:
        doc["certificate"] = extra
    text = json.dumps(doc, indent=2, default=_json_default)
    if args.out:
        _ensure_dir(args.out)
        with open(os.path.join(args.out, f"verify-{which}.json"), "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK if passed else EXIT_VERIFY


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def cmd_verify_bounds(args):
    checks, cert = verify_bounds(n_jobs=args.jobs)
    return _emit("bounds", checks, args, cert)


def cmd_verify_mc(args):
    return _emit("mc", verify_mc(seed=0 if args.seed is None else args.seed), args)


def cmd_construct_check(args):
    return _emit("construct", verify_construct(seed=0 if args.seed is None else args.seed), args)


def _ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise InputError(f"output directory {path} is not writable")


# ---------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="base seed override")
    common.add_argument("--jobs", type=int, default=-1, help="worker processes (default: all cores)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pkfilter", description="Pseudo-knockoff filter tools.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="run a simulation sweep")
    run.add_argument("--config", help="INI experiment config")
    run.add_argument("--preset", help=f"named preset ({', '.join(sorted(simharness.PRESETS))})")
    run.add_argument("--trials", type=int, default=None, help="override the trial count")
    run.set_defaults(func=cmd_run)

    flt = sub.add_parser("filter", parents=[common], help="apply the filter to a data set")
    flt.add_argument("X", help="design matrix (.csv, .npy or .bin)")
    flt.add_argument("y", help="response vector (.csv, .npy or .bin)")
    flt.add_argument("--method", default="general", choices=construct.METHODS)
    flt.add_argument("--kind", default=None, choices=stats.KINDS)
    flt.add_argument("--q", type=float, default=0.2)
    flt.add_argument("--m", type=int, default=2, help="classes for the general construction")
    flt.add_argument("--group-size", type=int, default=5)
    flt.add_argument("--mu", type=float, default=0.75, help="lambda multiplier")
    flt.set_defaults(func=cmd_filter)

    for name, func, text in (("verify-bounds", cmd_verify_bounds, "certify the uniform constant"),
                             ("verify-mc", cmd_verify_mc, "Monte Carlo checks of the bounds"),
                             ("construct-check", cmd_construct_check, "validate all constructions")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs == 0:
        print("--jobs must be nonzero", file=sys.stderr)
        return EXIT_INPUT
    if getattr(args, "q", 0.5) is not None and not 0 < getattr(args, "q", 0.5) < 1:
        print("--q must lie in (0, 1)", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
