"""Dense symmetric linear algebra used throughout the package.

Every routine is a pure function of its inputs.  Symmetric matrices are plain
``(p, p)`` ndarrays; :func:`as_sym` validates and symmetrizes them.  Tolerances
are relative to the max-abs entry of the input so that results do not depend
on the scale of an experiment.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg


class NotPSDError(np.linalg.LinAlgError):
    """Matrix has an eigenvalue below the PSD tolerance."""

    def __init__(self, message, eigenvalue):
        super().__init__(message)
        self.eigenvalue = float(eigenvalue)


class SingularMatrixError(np.linalg.LinAlgError):
    pass


def _check_finite(a, name="matrix"):
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def max_abs(a):
    a = np.asarray(a)
    return float(np.max(np.abs(a))) if a.size else 0.0


def as_sym(m, atol=None):
    """Return ``m`` as a float ndarray with exactly symmetric storage.

    Raises ``ValueError`` if ``m`` is not square, has non-finite entries, or is
    asymmetric beyond ``atol`` (default ``1e-8 * max|m|``).
    """
    m = _check_finite(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {m.shape}")
    if atol is None:
        atol = 1e-8 * max(max_abs(m), 1.0)
    if max_abs(m - m.T) > atol:
        raise ValueError("matrix is not symmetric")
    return 0.5 * (m + m.T)


def eig_sym(m):
    """Eigen-decomposition of a symmetric matrix, eigenvalues descending.

    Returns
    -------
    w : ndarray, shape (p,)
        Eigenvalues in descending order.
    V : ndarray, shape (p, p)
        Orthonormal eigenvectors as columns, ``m = V diag(w) V^T``.
    """
    m = as_sym(m)
    w, V = np.linalg.eigh(m)
    return w[::-1].copy(), V[:, ::-1].copy()


def lambda_min(m):
    return float(scipy.linalg.eigvalsh(as_sym(m), subset_by_index=[0, 0])[0])


def lambda_max(m):
    m = as_sym(m)
    p = m.shape[0]
    return float(scipy.linalg.eigvalsh(m, subset_by_index=[p - 1, p - 1])[0])


def chol_psd(m, tol=1e-10, scale=None):
    """Lower-triangular ``L`` with ``L @ L.T == m`` for a PSD (possibly singular) ``m``.

    A plain Cholesky is attempted first.  When it fails, eigenvalues in
    ``[-tol * lambda_max, 0)`` are clipped to zero and the factor is recovered
    from the QR decomposition of ``sqrt(Lambda) V^T``.  ``scale`` overrides
    ``lambda_max`` as the reference magnitude, which matters when ``m`` is the
    (near-zero) difference of two larger matrices.
    """
    m = as_sym(m)
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(m)
    scale = max(float(w[-1]), 0.0, 0.0 if scale is None else float(scale))
    if w[0] < -tol * max(scale, np.finfo(float).tiny):
        raise NotPSDError(
            f"matrix is not PSD: lambda_min = {w[0]:.3e} "
            f"< -{tol:.1e} * scale ({scale:.3e})",
            w[0],
        )
    root = np.sqrt(np.clip(w, 0.0, None))[:, None] * V.T
    r = np.linalg.qr(root, mode="r")
    L = r.T
    # qr leaves signs arbitrary; make the diagonal non-negative
    sgn = np.where(np.diag(L) < 0, -1.0, 1.0)
    return L * sgn[None, :]


def solve_spd(m, rhs, rcond=1e-12):
    """Solve ``m x = rhs`` for symmetric positive definite ``m``.

    Raises :class:`SingularMatrixError` when ``m`` is not positive definite
    within relative tolerance ``rcond``.
    """
    m = as_sym(m)
    rhs = _check_finite(rhs, "rhs")
    try:
        c, low = scipy.linalg.cho_factor(m, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"matrix is not positive definite: {exc}") from None
    d = np.diag(c) ** 2
    if d.min() <= rcond * d.max():
        raise SingularMatrixError(
            f"matrix is numerically singular (pivot ratio {d.min() / d.max():.2e})"
        )
    return scipy.linalg.cho_solve((c, low), rhs, check_finite=False)


def inv_spd(m, rcond=1e-12):
    m = as_sym(m)
    out = solve_spd(m, np.eye(m.shape[0]), rcond=rcond)
    return 0.5 * (out + out.T)


def svd_thin(a):
    """Thin SVD ``a = U diag(d) V^T`` with ``U`` of shape (n, p), ``V`` of shape (p, p)."""
    a = _check_finite(a)
    if a.ndim != 2 or a.shape[0] < a.shape[1]:
        raise ValueError(f"svd_thin needs n >= p, got shape {a.shape}")
    U, d, Vt = np.linalg.svd(a, full_matrices=False)
    return U, d, Vt.T


def matrix_rank(a, rtol=1e-10):
    d = np.linalg.svd(np.asarray(a, dtype=float), compute_uv=False)
    if d.size == 0 or d[0] == 0:
        return 0
    return int(np.sum(d > rtol * d[0]))


def orthonormal_complement(a, k, rng=None, max_redraws=10):
    """``k`` orthonormal columns orthogonal to the column space of ``a``.

    Random Gaussian columns are projected off ``range(a)`` and orthonormalized;
    a draw whose projected block is nearly rank deficient is discarded and
    redrawn.  ``rng`` may be a seed or a ``numpy.random.Generator``.
    """
    a = _check_finite(a)
    if a.ndim == 1:
        a = a[:, None]
    n = a.shape[0]
    r = matrix_rank(a)
    if k < 0 or r + k > n:
        raise ValueError(f"cannot find {k} directions orthogonal to a rank-{r} matrix in R^{n}")
    if k == 0:
        return np.zeros((n, 0))
    rng = np.random.default_rng(rng)
    U, d, _ = np.linalg.svd(a, full_matrices=False)
    Q = U[:, :r]
    for _ in range(max_redraws):
        Z = rng.standard_normal((n, k))
        # two passes of projection keep the residual orthogonal to machine precision
        for _ in range(2):
            Z -= Q @ (Q.T @ Z)
        Qz, R = np.linalg.qr(Z)
        diag = np.abs(np.diag(R))
        if diag.min() > 1e-8 * diag.max():
            Qz -= Q @ (Q.T @ Qz)
            Qz, _ = np.linalg.qr(Qz)
            return Qz
    raise np.linalg.LinAlgError("orthonormal_complement: repeated near-collinear draws")
