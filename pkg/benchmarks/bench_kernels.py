"""Compare the compiled and pure-Python kernel backends.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Both backends are called on identical inputs; the script checks that their
outputs agree and reports the median wall time of each.
"""
import argparse
import statistics
import time

import numpy as np

from pkfilter import kernels
from pkfilter.construct import construct
from pkfilter.datagen import CovarianceModel, sample_design, sample_response, sample_signal
from pkfilter.stats import KKT_TOL_PER_FEATURE, MAX_SWEEPS, STEP_TOL, SplitFactor, default_lambda


def lasso_case(p=100, n=300, rho=0.5, seed=0):
    design = sample_design(CovarianceModel("ar", p, rho=rho), n, seed=seed)
    pk = construct(design, "orthogonal", seed=seed)
    f = SplitFactor(design.X, pk.Xt)
    sig = sample_signal(p, 10, 3.5, seed=seed + 1)
    y = sample_response(design.X, sig.beta, seed=seed + 2)
    lam = default_lambda(f.split(y))
    return f.G_plus, np.ascontiguousarray(f.A_plus.T @ y), lam


def bound_case(size=2000, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.integers(1, 200, size).astype(float)
    y = x + rng.integers(0, 200, size)
    xi_star = np.full(size, 0.3)
    return x, y, 3.0, 5.0, xi_star / 3, 3 * xi_star, 0.01


def timeit(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled backend not built; only the Python backend is available")

    G, c, lam = lasso_case()
    p = c.size
    bargs = bound_case()
    results = {}
    for name, mod in backends.items():
        def run_lasso():
            b = np.zeros(p)
            sweeps, kkt = mod.cd_lasso_gram(G, c, lam, b, KKT_TOL_PER_FEATURE * p, STEP_TOL, MAX_SWEEPS)
            return b, sweeps
        t_lasso, (b, sweeps) = timeit(run_lasso, args.repeat)
        t_bound, (vals, _) = timeit(lambda: mod.min_log_bound(*bargs), args.repeat)
        results[name] = (t_lasso, b, sweeps, t_bound, np.asarray(vals))
        print(f"{name:>7}: lasso p={p} {t_lasso * 1e3:9.2f} ms ({sweeps} sweeps)   "
              f"bound scan n={bargs[0].size} {t_bound * 1e3:9.2f} ms")

    if len(results) == 2:
        py, cy = results["python"], results["cython"]
        print(f"lasso coefficient max diff {np.max(np.abs(py[1] - cy[1])):.2e}, "
              f"bound max diff {np.max(np.abs(py[4] - cy[4])):.2e}")
        print(f"speedup: lasso {py[0] / cy[0]:.1f}x, bound scan {py[3] / cy[3]:.1f}x")


if __name__ == "__main__":
    main()
