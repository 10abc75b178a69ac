import numpy as np

from pkfilter import kernels, theory
from pkfilter.stats import KKT_TOL_PER_FEATURE, MAX_SWEEPS, STEP_TOL


def _problem(p=30, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((90, p))
    y = A[:, :4] @ np.array([3.0, -2.0, 1.5, 1.0]) + rng.standard_normal(90)
    return np.ascontiguousarray(A.T @ A), np.ascontiguousarray(A.T @ y)


def test_backend_name():
    assert kernels.BACKEND in kernels.available_backends()


def test_cd_lasso_kkt(backend):
    G, c = _problem()
    p = c.size
    lam = 5.0
    b = np.zeros(p)
    sweeps, kkt = backend.cd_lasso_gram(G, c, lam, b, KKT_TOL_PER_FEATURE * p, STEP_TOL, MAX_SWEEPS)
    assert sweeps > 0 and kkt <= KKT_TOL_PER_FEATURE * p
    g = c - G @ b
    active = b != 0
    assert np.allclose(g[active], lam * np.sign(b[active]), atol=1e-6)
    assert np.all(np.abs(g[~active]) <= lam + 1e-6)


def test_cd_lasso_zero_solution(backend):
    G, c = _problem()
    b = np.zeros(c.size)
    sweeps, kkt = backend.cd_lasso_gram(G, c, np.max(np.abs(c)) * 1.01, b, 1e-6, STEP_TOL, 10)
    assert sweeps == 0 and np.all(b == 0)


def test_backends_agree():
    backends = kernels.available_backends()
    G, c = _problem(seed=3)
    outs = []
    for mod in backends.values():
        b = np.zeros(c.size)
        mod.cd_lasso_gram(G, c, 2.0, b, 1e-8 * c.size, STEP_TOL, MAX_SWEEPS)
        outs.append(b)
    for b in outs[1:]:
        assert np.max(np.abs(b - outs[0])) <= 1e-12


def test_min_log_bound_matches_grid(backend):
    x = np.array([3.0, 10.0, 40.0])
    y = np.array([5.0, 14.0, 70.0])
    t, s = 3.0, 6.0
    lo = np.array([0.05, 0.1, 0.02])
    hi = 3 * lo / 0.333
    vals, args = backend.min_log_bound(x, y, t, s, lo, hi, 0.01)
    for i in range(3):
        grid = lo[i] + 0.01 * np.arange(int((hi[i] + 1e-12 - lo[i]) / 0.01) + 1)
        brute = theory.log_bound_B(x[i], y[i], t, grid, s)
        assert np.asarray(vals)[i] == np.min(brute) or abs(np.asarray(vals)[i] - np.min(brute)) <= 1e-12
        assert abs(np.asarray(args)[i] - grid[np.argmin(brute)]) <= 1e-12
