"""Pure-Python/NumPy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and the same iteration order, so both backends walk through
identical iterates up to floating-point summation order.
"""
import numpy as np

_LOG2 = np.log(2.0)


def _logcosh(a):
    a = np.abs(a)
    return a + np.log1p(np.exp(-2.0 * a)) - _LOG2


def _kkt(G, c, b, lam):
    g = c - G @ b
    viol = np.where(b > 0, np.abs(g - lam), np.where(b < 0, np.abs(g + lam), np.abs(g) - lam))
    return g, float(viol.max()) if viol.size else 0.0


def cd_lasso_gram(G, c, lam, b, kkt_tol, step_tol, max_sweeps):
    p = b.shape[0]
    diag = np.diag(G).copy()
    g, viol = _kkt(G, c, b, lam)
    if viol <= kkt_tol:
        return 0, viol
    sweep = 0
    while sweep < max_sweeps:
        sweep += 1
        change = 0.0
        for j in range(p):
            gjj = diag[j]
            if gjj <= 0:
                continue
            z = gjj * b[j] + g[j]
            if z > lam:
                new = (z - lam) / gjj
            elif z < -lam:
                new = (z + lam) / gjj
            else:
                new = 0.0
            delta = new - b[j]
            if delta != 0.0:
                b[j] = new
                g -= G[:, j] * delta
                if abs(delta) > change:
                    change = abs(delta)
        g, viol = _kkt(G, c, b, lam)
        if change <= step_tol and viol <= kkt_tol:
            break
    return sweep, viol


def min_log_bound(x, y, t, s, xi_lo, xi_hi, step):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lo = np.asarray(xi_lo, dtype=float)
    hi = np.asarray(xi_hi, dtype=float)
    if x.size == 0:
        return np.empty(0), np.empty(0)
    count = np.floor((hi - lo + 1e-12) / step).astype(int) + 1
    count = np.maximum(count, 1)
    j = np.arange(count.max())
    xi = lo[:, None] + step * j[None, :]
    valid = (j[None, :] < count[:, None]) & (xi <= hi[:, None] + 1e-12)
    valid[:, 0] = True
    lin = (t * x - y) / 2.0 + s
    val = (-xi * lin[:, None] + x[:, None] * _logcosh((1.0 + t) * xi / 2.0)
           + (y - x)[:, None] * _logcosh(xi / 2.0))
    val = np.where(valid, val, np.inf)
    idx = np.argmin(val, axis=1)
    rows = np.arange(x.size)
    return val[rows, idx], xi[rows, idx]
