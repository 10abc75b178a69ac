"""Least-squares split, half-Lasso and the feature statistics W.

With ``A+ = (X + Xt)/2`` and ``A- = (X - Xt)/2`` the pseudo-knockoff condition
makes ``A+`` and ``A-`` orthogonal, so least squares on ``[X Xt]`` splits into

    eta = (A+^T A+)^{-1} A+^T y   (beta_hat + beta_tilde)
    xi  = (A-^T A-)^{-1} A-^T y   (beta_hat - beta_tilde)

and penalizing only the sum ``beta_hat + beta_tilde`` decouples into a Lasso
on ``A+`` plus an unpenalized problem whose solution is ``xi``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import kernels, numerics

KINDS = ("W1", "W2", "least_squares", "lasso_signmax")

KKT_TOL_PER_FEATURE = 1e-8
STEP_TOL = 1e-10
MAX_SWEEPS = 10_000


class LassoConvergenceError(RuntimeError):
    def __init__(self, message, kkt):
        super().__init__(message)
        self.kkt = kkt


@dataclass
class SplitCoefficients:
    """Least-squares coefficients in the (sum, difference) parametrization."""

    eta: np.ndarray
    xi: np.ndarray
    residual_norm: float
    dof: int


@dataclass
class FeatureStatistics:
    W: np.ndarray
    kind: str
    lam: float
    sum_coef: np.ndarray
    diff_coef: np.ndarray
    sweeps: int = 0
    kkt: float = 0.0


class SplitFactor:
    """Cached Gram factorizations of ``A+`` and ``A-`` for repeated responses.

    ``X`` and ``Xt`` stay fixed across trials of one grid point, so the two
    Cholesky factors are computed once and each new ``y`` costs two triangular
    solves.
    """

    def __init__(self, X, Xt, rcond=1e-12):
        X = np.asarray(X, dtype=float)
        Xt = np.asarray(Xt, dtype=float)
        if X.shape != Xt.shape:
            raise ValueError(f"X and Xt shapes differ: {X.shape} vs {Xt.shape}")
        n, p = X.shape
        if n <= 2 * p:
            raise ValueError(f"need n > 2p for the residual degrees of freedom, got n={n}, p={p}")
        self.n, self.p = n, p
        self.A_plus = 0.5 * (X + Xt)
        self.A_minus = 0.5 * (X - Xt)
        self.G_plus = np.ascontiguousarray(self.A_plus.T @ self.A_plus)
        self.G_minus = self.A_minus.T @ self.A_minus
        self._cf_plus = _factor(self.G_plus, "A+", rcond)
        self._cf_minus = _factor(self.G_minus, "A-", rcond)

    def split(self, y):
        y = np.asarray(y, dtype=float)
        c_plus = self.A_plus.T @ y
        eta = scipy.linalg.cho_solve(self._cf_plus, c_plus)
        xi = scipy.linalg.cho_solve(self._cf_minus, self.A_minus.T @ y)
        resid = y - self.A_plus @ eta - self.A_minus @ xi
        return SplitCoefficients(eta=eta, xi=xi, residual_norm=float(np.linalg.norm(resid)),
                                 dof=self.n - 2 * self.p)


def _factor(G, name, rcond):
    G = numerics.as_sym(G)
    try:
        cf = scipy.linalg.cho_factor(G, lower=True)
    except np.linalg.LinAlgError as exc:
        raise numerics.SingularMatrixError(f"{name} is rank deficient") from exc
    piv = np.abs(np.diag(cf[0]))
    if piv.min() <= rcond * piv.max():
        raise numerics.SingularMatrixError(
            f"{name} is numerically rank deficient (pivot ratio {piv.min() / piv.max():.2e})"
        )
    return cf


def least_squares_split(X, Xt, y, factor: SplitFactor | None = None):
    """Least-squares ``eta`` and ``xi`` for ``y`` on ``[X Xt]``.

    Raises ``SingularMatrixError`` if ``A+`` or ``A-`` is rank deficient.
    """
    if factor is None:
        factor = SplitFactor(X, Xt)
    return factor.split(y)


def default_lambda(split: SplitCoefficients, mu=0.75):
    """``mu * residual_norm / sqrt(n - 2p)``."""
    if split.dof <= 0:
        raise ValueError(f"residual degrees of freedom must be positive, got {split.dof}")
    return mu * split.residual_norm / np.sqrt(split.dof)


def lasso_gram(G, c, lam, init=None, max_sweeps=MAX_SWEEPS):
    """Coordinate descent for ``min_b 0.5 b'Gb - c'b + lam |b|_1``.

    Stops when the maximum KKT violation is at most ``1e-8 * p`` and the
    largest coordinate move in a sweep is at most ``1e-10``.

    Returns
    -------
    b : ndarray
    sweeps : int
    kkt : float
        Final maximum KKT violation.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    G = np.ascontiguousarray(G, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    p = c.shape[0]
    b = np.zeros(p) if init is None else np.array(init, dtype=float)
    kkt_tol = KKT_TOL_PER_FEATURE * p
    sweeps, kkt = kernels.cd_lasso_gram(G, c, float(lam), b, kkt_tol, STEP_TOL, int(max_sweeps))
    if kkt > kkt_tol:
        raise LassoConvergenceError(
            f"coordinate descent did not converge in {sweeps} sweeps (KKT residual {kkt:.3e})", kkt
        )
    return b, sweeps, kkt


def half_lasso_objectives(factor: SplitFactor, y, sum_coef, diff_coef, lam):
    """Full half-Lasso objective and its two decoupled pieces.

    Returns ``(full, sum_part, diff_part, residual_part)``; orthogonality of
    ``A+`` and ``A-`` makes ``full = sum_part + diff_part + residual_part``.
    """
    split = factor.split(y)
    fit = factor.A_plus @ sum_coef + factor.A_minus @ diff_coef
    full = 0.5 * np.sum((y - fit) ** 2) + lam * np.abs(sum_coef).sum()
    sum_part = 0.5 * np.sum((factor.A_plus @ (split.eta - sum_coef)) ** 2) + lam * np.abs(sum_coef).sum()
    diff_part = 0.5 * np.sum((factor.A_minus @ (split.xi - diff_coef)) ** 2)
    return full, sum_part, diff_part, 0.5 * split.residual_norm ** 2


def half_lasso(X, Xt, y, lam, factor: SplitFactor | None = None, split=None, check=True):
    """Minimize ``0.5 |y - X b1 - Xt b2|^2 + lam |b1 + b2|_1``.

    Returns ``(sum_coef, diff_coef, info)`` where ``diff_coef`` is the
    least-squares ``xi`` and ``sum_coef`` solves the Lasso on ``A+`` in Gram
    form (``G = A+^T A+``, ``c = A+^T y``).  ``info`` holds the sweep count,
    final KKT residual and the decoupling gap.
    """
    if factor is None:
        factor = SplitFactor(X, Xt)
    y = np.asarray(y, dtype=float)
    if split is None:
        split = factor.split(y)
    c = factor.A_plus.T @ y
    sum_coef, sweeps, kkt = lasso_gram(factor.G_plus, c, lam)
    diff_coef = split.xi.copy()
    info = {"sweeps": sweeps, "kkt": kkt}
    if check:
        full, a, b, r = half_lasso_objectives(factor, y, sum_coef, diff_coef, lam)
        gap = abs(full - (a + b + r))
        info["decoupling_gap"] = gap
        if gap > 1e-8 * max(1.0, full):
            raise numerics.SingularMatrixError(
                f"half-Lasso objective does not decouple (gap {gap:.3e}); "
                "is Xt a pseudo-knockoff of X?"
            )
    return sum_coef, diff_coef, info


def make_statistic(sum_coef, diff_coef, kind="W1", lam=0.0):
    """Feature statistics from ``beta_hat + beta_tilde`` and ``beta_hat - beta_tilde``.

    ``W1 = sum * sign(diff)``; ``W2 = max(|bh|, |bt|) * sign(|bh| - |bt|)`` with
    ``bh = (sum + diff)/2``, ``bt = (sum - diff)/2``.  ``sign(0) = 0``.
    """
    s = np.asarray(sum_coef, dtype=float)
    d = np.asarray(diff_coef, dtype=float)
    if s.shape != d.shape:
        raise ValueError("sum_coef and diff_coef must have the same shape")
    if kind in ("W1", "least_squares"):
        W = s * np.sign(d)
    elif kind == "W2":
        bh = 0.5 * (s + d)
        bt = 0.5 * (s - d)
        W = np.maximum(np.abs(bh), np.abs(bt)) * np.sign(np.abs(bh) - np.abs(bt))
    else:
        raise ValueError(f"unknown statistic kind {kind!r}")
    return FeatureStatistics(W=W, kind=kind, lam=float(lam), sum_coef=s, diff_coef=d)


def least_squares_statistic(split: SplitCoefficients):
    """``W1`` applied to the unpenalized ``(eta, xi)``."""
    return make_statistic(split.eta, split.xi, kind="least_squares", lam=0.0)


def lasso_signmax_baseline(X, Xt, y, lam, s, mask_floor=0.001):
    """Joint Lasso on ``[X, Xt_P]`` with ``P = {j : s_j >= mask_floor}``; sign-max W on ``P``.

    Knockoff columns with tiny ``s_j`` nearly duplicate their originals; they
    are dropped and their statistics set to zero.
    """
    X = np.asarray(X, dtype=float)
    Xt = np.asarray(Xt, dtype=float)
    y = np.asarray(y, dtype=float)
    p = X.shape[1]
    s = np.asarray(s, dtype=float)
    P = np.flatnonzero(s >= mask_floor)
    Z = np.hstack([X, Xt[:, P]])
    coef, sweeps, kkt = lasso_gram(Z.T @ Z, Z.T @ y, lam)
    bh = coef[:p]
    bt = np.zeros(p)
    bt[P] = coef[p:]
    W = np.zeros(p)
    W[P] = np.maximum(np.abs(bh[P]), np.abs(bt[P])) * np.sign(np.abs(bh[P]) - np.abs(bt[P]))
    return FeatureStatistics(W=W, kind="lasso_signmax", lam=float(lam), sum_coef=bh + bt,
                             diff_coef=bh - bt, sweeps=sweeps, kkt=kkt)


def compute_statistic(kind, factor: SplitFactor, X, Xt, y, mu=0.75, s=None, mask_floor=0.001):
    """One-call dispatcher used by the experiment harness and the CLI."""
    split = factor.split(y)
    lam = default_lambda(split, mu)
    if kind == "least_squares":
        return least_squares_statistic(split)
    if kind == "lasso_signmax":
        if s is None:
            raise ValueError("lasso_signmax needs the knockoff s-vector")
        return lasso_signmax_baseline(X, Xt, y, lam, s, mask_floor)
    sum_coef, diff_coef, info = half_lasso(X, Xt, y, lam, factor=factor, split=split)
    out = make_statistic(sum_coef, diff_coef, kind, lam)
    out.sweeps, out.kkt = info["sweeps"], info["kkt"]
    return out
