# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.  ``_kernels_py`` holds the reference implementation."""
import numpy as np

from libc.math cimport fabs, exp, log, log1p, INFINITY


cdef inline double _soft(double z, double lam) nogil:
    if z > lam:
        return z - lam
    if z < -lam:
        return z + lam
    return 0.0


cdef inline double _logcosh(double a) nogil:
    a = fabs(a)
    return a + log1p(exp(-2.0 * a)) - 0.6931471805599453


cdef double _kkt(const double[:, ::1] G, const double[::1] c, const double[::1] b,
                 double lam, double[::1] g) nogil:
    cdef Py_ssize_t p = b.shape[0], i, j
    cdef double acc, viol = 0.0, v
    for i in range(p):
        acc = c[i]
        for j in range(p):
            acc -= G[i, j] * b[j]
        g[i] = acc
        if b[i] > 0:
            v = fabs(acc - lam)
        elif b[i] < 0:
            v = fabs(acc + lam)
        else:
            v = fabs(acc) - lam
        if v > viol:
            viol = v
    return viol


def cd_lasso_gram(const double[:, ::1] G, const double[::1] c, double lam,
                  double[::1] b, double kkt_tol, double step_tol, int max_sweeps):
    """Cyclic coordinate descent for ``0.5 b'Gb - c'b + lam |b|_1``; updates ``b`` in place.

    Returns ``(sweeps, kkt_violation)``.
    """
    cdef Py_ssize_t p = b.shape[0], j, k
    cdef double[::1] g = np.empty(p)
    cdef double gjj, new, delta, change = 0.0, viol
    cdef int sweep = 0
    cdef bint done
    with nogil:
        viol = _kkt(G, c, b, lam, g)
        done = viol <= kkt_tol
        while not done and sweep < max_sweeps:
            sweep += 1
            change = 0.0
            for j in range(p):
                gjj = G[j, j]
                if gjj <= 0:
                    continue
                new = _soft(gjj * b[j] + g[j], lam) / gjj
                delta = new - b[j]
                if delta != 0.0:
                    b[j] = new
                    for k in range(p):
                        g[k] -= G[k, j] * delta
                    if fabs(delta) > change:
                        change = fabs(delta)
            viol = _kkt(G, c, b, lam, g)
            done = change <= step_tol and viol <= kkt_tol
    return sweep, viol


def min_log_bound(const double[::1] x, const double[::1] y, double t, double s,
                  const double[::1] xi_lo, const double[::1] xi_hi, double step):
    """Minimum of ``log B(x, y, t, xi, s)`` over ``xi = xi_lo + step*j <= xi_hi``.

    ``log B`` is convex in ``xi``, so the scan stops at the first increase.
    Returns ``(min_log_value, argmin_xi)`` arrays.
    """
    cdef Py_ssize_t n = x.shape[0], i
    cdef double[::1] best = np.empty(n)
    cdef double[::1] arg = np.empty(n)
    cdef double xi, val, cur, lin, a1, a2, hi
    cdef Py_ssize_t j
    with nogil:
        for i in range(n):
            cur = INFINITY
            xi = xi_lo[i]
            hi = xi_hi[i] + 1e-12
            arg[i] = xi
            lin = (t * x[i] - y[i]) / 2.0 + s
            j = 0
            while xi <= hi:
                a1 = (1.0 + t) * xi / 2.0
                a2 = xi / 2.0
                val = -xi * lin + x[i] * _logcosh(a1) + (y[i] - x[i]) * _logcosh(a2)
                if val < cur:
                    cur = val
                    arg[i] = xi
                elif val > cur:
                    break
                j += 1
                xi = xi_lo[i] + step * j
            best[i] = cur
    return np.asarray(best), np.asarray(arg)
