"""Pseudo-knockoff and knockoff matrix constructions.

A pseudo-knockoff ``Xt`` of a design ``X`` satisfies ``(X + Xt)^T (X - Xt) = 0``
(equivalently ``Xt^T Xt = X^T X`` with ``X^T Xt`` symmetric).  Each
construction picks the covariance ``B = 4 [(X - Xt)^T (X - Xt)]^{-1}`` of the
least-squares difference ``xi`` and then realizes ``Xt`` from ``B``:

    Xt = X (I - 2 Sigma^{-1} B^{-1}) + 2 U C B^{-1},   C^T C = B - Sigma^{-1},

with ``U`` an orthonormal basis orthogonal to ``X``.  A valid ``B`` must satisfy
``B >= Sigma^{-1}`` in the PSD order.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

from . import numerics
from .datagen import DesignEnsemble, make_rng

log = logging.getLogger(__name__)

PSEUDO_METHODS = ("orthogonal", "block_diagonal", "general")
KNOCKOFF_METHODS = ("knockoff_equi", "knockoff_sdp")
METHODS = PSEUDO_METHODS + KNOCKOFF_METHODS

IDENTITY_TOL = 1e-8


class ConstructionError(RuntimeError):
    pass


@dataclass
class PseudoKnockoff:
    """A constructed (pseudo-)knockoff matrix and the metadata that produced it.

    Attributes
    ----------
    Xt : ndarray (n, p)
    B : ndarray (p, p)
        Target covariance of ``xi``; for knockoff baselines ``diag(2 / s)``.
    method : str
    partition : list of ndarray
        Groups ``G_i`` (block diagonal) or classes ``C_j`` (general).
    gamma : float or None
    s : ndarray or None
        Knockoff s-vector (knockoff baselines only).
    """

    Xt: np.ndarray
    B: np.ndarray
    method: str
    partition: list = field(default_factory=list)
    gamma: float | None = None
    s: np.ndarray | None = None
    blocks: list = field(default_factory=list, repr=False)

    @property
    def is_knockoff(self):
        return self.s is not None

    def diff_gram_target(self):
        """``4 B^{-1}``, the Gram of ``X - Xt`` the construction promises."""
        if self.s is not None:
            return np.diag(2.0 * self.s)
        return 4.0 * numerics.inv_spd(self.B)


def _design(X):
    if isinstance(X, DesignEnsemble):
        return X
    return DesignEnsemble.from_matrix(X, normalize=False)


def _check_shape(design, strict=False):
    n, p = design.X.shape
    if (n <= 2 * p) if strict else (n < 2 * p):
        raise ConstructionError(f"need n {'>' if strict else '>='} 2p, got n={n}, p={p}")


def _full_rank(design):
    d = np.linalg.svd(design.X, compute_uv=False)
    if d[-1] <= 1e-10 * d[0]:
        raise ConstructionError(f"design is rank deficient (sigma_min/sigma_max = {d[-1] / d[0]:.2e})")


def as_partition(groups, p):
    """Normalize ``groups`` (an int group size or a list of index lists) to index arrays."""
    if isinstance(groups, (int, np.integer)):
        size = int(groups)
        if size < 1:
            raise ValueError("group size must be positive")
        return [np.arange(i, min(i + size, p)) for i in range(0, p, size)]
    parts = [np.asarray(g, dtype=int) for g in groups]
    flat = np.sort(np.concatenate(parts)) if parts else np.array([], dtype=int)
    if not np.array_equal(flat, np.arange(p)):
        raise ValueError("groups must partition range(p)")
    return parts


def interleaved_classes(p, m):
    """Classes ``C_k = {i*m + k}``: feature ``j`` goes to class ``j mod m``."""
    if not 1 <= m <= p:
        raise ValueError(f"need 1 <= m <= p, got m={m}")
    return [np.arange(k, p, m) for k in range(m)]


# ---------------------------------------------------------------------------
# building Xt from B

def build_xtilde_from_B(X, sigma, B, rng=None):
    """Realize ``Xt`` with ``(X-Xt)^T(X-Xt) = 4 B^{-1}`` and ``(X+Xt)^T(X-Xt) = 0``."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if n < 2 * p:
        raise ConstructionError(f"need n >= 2p, got n={n}, p={p}")
    B = numerics.as_sym(B)
    sigma_inv = numerics.inv_spd(sigma)
    gap = B - sigma_inv
    try:
        L = numerics.chol_psd(gap, tol=1e-10, scale=numerics.max_abs(B))
    except numerics.NotPSDError as exc:
        raise ConstructionError(
            f"B - Sigma^-1 is not PSD (lambda_min = {exc.eigenvalue:.3e})"
        ) from exc
    B_inv = numerics.inv_spd(B)
    U = orthonormal_basis_off(X, rng)
    return X - 2.0 * X @ (sigma_inv @ B_inv) + 2.0 * (U @ L.T) @ B_inv


def orthonormal_basis_off(X, rng=None):
    return numerics.orthonormal_complement(X, X.shape[1], rng=rng)


# ---------------------------------------------------------------------------
# orthogonal construction

def construct_orthogonal(X, seed=0):
    """``Xt = W D V^T`` from the SVD ``X = U D V^T`` and ``W`` orthogonal to ``X``."""
    design = _design(X)
    _check_shape(design)
    _full_rank(design)
    _, d, V = numerics.svd_thin(design.X)
    W = numerics.orthonormal_complement(design.X, design.p, rng=make_rng(seed, 3))
    Xt = (W * d[None, :]) @ V.T
    B = 2.0 * numerics.inv_spd(design.sigma)
    return PseudoKnockoff(Xt=Xt, B=B, method="orthogonal")


# ---------------------------------------------------------------------------
# block-diagonal construction

def _inv_sqrt_sym(m):
    w, V = np.linalg.eigh(numerics.as_sym(m))
    if w[0] <= 1e-12 * max(w[-1], 1e-300):
        raise ConstructionError(f"within-group block is singular (lambda_min = {w[0]:.3e})")
    return (V / np.sqrt(w)[None, :]) @ V.T


def block_gamma(sigma, groups):
    """``gamma = min(1, 2 lambda_min(D Sigma D)) / 1.2`` with ``D = diag(Sigma_GG^{-1/2})``."""
    sigma = numerics.as_sym(sigma)
    parts = as_partition(groups, sigma.shape[0])
    D = scipy.linalg.block_diag(*[_inv_sqrt_sym(sigma[np.ix_(g, g)]) for g in parts])
    order = np.concatenate(parts)
    S = sigma[np.ix_(order, order)]
    lmin = numerics.lambda_min(D @ S @ D)
    return min(1.0, 2.0 * lmin) / 1.2


def construct_block_diagonal(X, groups=5, seed=0, gamma=None):
    """Block-diagonal pseudo-knockoff: ``B = 2 diag(S_11^{-1}, ..., S_kk^{-1})``, ``S_ii = gamma Sigma_GiGi``."""
    design = _design(X)
    _check_shape(design)
    _full_rank(design)
    sigma = design.sigma
    parts = as_partition(groups, design.p)
    if gamma is None:
        gamma = block_gamma(sigma, parts)
    B = np.zeros_like(sigma)
    blocks = []
    for g in parts:
        S_g = gamma * sigma[np.ix_(g, g)]
        blocks.append(S_g)
        B[np.ix_(g, g)] = 2.0 * numerics.inv_spd(S_g)
    B = numerics.as_sym(B)
    Xt = build_xtilde_from_B(design.X, sigma, B, rng=make_rng(seed, 3))
    return PseudoKnockoff(Xt=Xt, B=B, method="block_diagonal", partition=parts,
                          gamma=float(gamma), blocks=blocks)


# ---------------------------------------------------------------------------
# cutting-plane solver for diagonal LMIs

@dataclass
class DiagLMIResult:
    """Outcome of :func:`diag_lmi_cutting_plane`.

    ``d`` is always feasible.  ``bound`` is the LP relaxation value, so the
    optimum lies between ``sum(d)`` and ``bound``.
    """

    d: np.ndarray
    bound: float
    iterations: int
    cuts: int
    converged: bool


def _lmi(M, sense, d):
    return sense * (np.diag(d) - M)


def _pull_to_boundary(M, sense, interior, d):
    """Largest ``theta`` in [0, 1] with ``interior + theta (d - interior)`` feasible,
    plus the eigenvector of the LMI that becomes singular there (None if theta = 1)."""
    P = _lmi(M, sense, interior)
    Q = sense * np.diag(d - interior)
    # P + theta Q >= 0  <=>  theta * lambda_max(-Q; P) <= 1
    w, V = scipy.linalg.eigh(-Q, P)
    if w[-1] <= 1.0:
        return 1.0, None
    return 1.0 / w[-1], V[:, -1] / np.linalg.norm(V[:, -1])


def diag_lmi_cutting_plane(M, sense, lower, upper, interior, rtol=1e-7, tol=1e-8,
                           max_iter=500, max_cuts_per_iter=10):
    """Eigenvector cutting planes for a linear objective over a diagonal LMI.

    ``sense=+1``: minimize ``sum(d)`` s.t. ``diag(d) - M >= 0``, ``d >= lower``.
    ``sense=-1``: maximize ``sum(d)`` s.t. ``M - diag(d) >= 0``, ``lower <= d <= upper``.

    Every unit vector ``v`` gives the valid cut ``sense (sum_i v_i^2 d_i - v'Mv) >= 0``.
    Cuts come from the negative eigenvectors at the LP point and from the
    singular direction at the point where the segment from ``interior`` (a
    strictly feasible point) to the LP point leaves the feasible set.  That
    boundary point is feasible, so the loop stops on a certified relative gap
    ``rtol`` as well as on ``lambda_min >= -tol * scale`` at the LP point.
    """
    M = numerics.as_sym(M)
    p = M.shape[0]
    scale = max(numerics.max_abs(M), 1.0)
    lo = np.broadcast_to(np.asarray(lower, dtype=float), (p,))
    hi = None if upper is None else np.broadcast_to(np.asarray(upper, dtype=float), (p,))
    bounds = [(lo[i], None if hi is None else hi[i]) for i in range(p)]
    c = float(sense) * np.ones(p)
    interior = np.asarray(interior, dtype=float)
    if numerics.lambda_min(_lmi(M, sense, interior)) <= 0:
        raise ConstructionError("interior point is not strictly feasible")

    # the diagonal of the LMI gives the first p cuts
    A_rows = [np.eye(p)]
    b_rows = [np.diag(M).copy()]
    best = interior.copy()
    bound = np.inf * sense
    it = 0
    converged = False
    ncuts = p
    while it < max_iter:
        it += 1
        A = np.vstack(A_rows)
        b = np.concatenate(b_rows)
        # sense*(A d - b) >= 0  ->  -sense*A d <= -sense*b
        res = linprog(c, A_ub=-sense * A, b_ub=-sense * b, bounds=bounds, method="highs")
        if res.status != 0:
            raise ConstructionError(f"cutting-plane LP failed: {res.message}")
        d = res.x
        bound = float(d.sum())
        w, V = np.linalg.eigh(_lmi(M, sense, d))
        if w[0] >= 0:
            best = d
            converged = True
            break
        theta, v = _pull_to_boundary(M, sense, interior, d)
        cand = interior + theta * (d - interior)
        if sense * (cand.sum() - best.sum()) < 0:
            best = cand
        gap = abs(bound - best.sum()) / max(abs(bound), 1.0)
        if gap <= rtol or w[0] >= -tol * scale:
            converged = True
            break
        bad = np.flatnonzero(w < -tol * scale)[:max_cuts_per_iter]
        Vb = V[:, bad]
        if v is not None:
            Vb = np.column_stack([Vb, v])
        A_rows.append((Vb ** 2).T)
        b_rows.append(np.einsum("ij,ik,kj->j", Vb, M, Vb))
        ncuts += Vb.shape[1]
    return DiagLMIResult(d=best, bound=bound, iterations=it, cuts=ncuts, converged=converged)


def _barrier_value(M, sense, lo, hi, d, t):
    if np.any(d <= lo) or (hi is not None and np.any(d >= hi)):
        return np.inf
    try:
        C = np.linalg.cholesky(_lmi(M, sense, d))
    except np.linalg.LinAlgError:
        return np.inf
    val = sense * t * d.sum() - 2.0 * np.log(np.diag(C)).sum() - np.log(d - lo).sum()
    if hi is not None:
        val -= np.log(hi - d).sum()
    return val


def diag_lmi_barrier(M, sense, lower, upper, interior, rtol=1e-9, mu=20.0, max_newton=200):
    """Log-barrier Newton method for the same problems as :func:`diag_lmi_cutting_plane`.

    Minimizes ``sense * t * sum(d) - log det(LMI) - sum log(d - lower) [- sum log(upper - d)]``
    for increasing ``t``.  Every iterate is strictly feasible and the final
    suboptimality is at most ``nu / t`` (``nu`` = number of barrier terms),
    which is driven below ``rtol * max(1, |sum(d)|)``.
    """
    M = numerics.as_sym(M)
    p = M.shape[0]
    lo = np.broadcast_to(np.asarray(lower, dtype=float), (p,))
    hi = None if upper is None else np.broadcast_to(np.asarray(upper, dtype=float), (p,))
    d = np.asarray(interior, dtype=float).copy()
    if not np.isfinite(_barrier_value(M, sense, lo, hi, d, 1.0)):
        raise ConstructionError("interior point is not strictly feasible")
    nu = 2 * p + (p if hi is not None else 0)
    t = nu / max(abs(d.sum()), 1.0)
    steps = 0
    converged = True
    while converged:
        for _ in range(max_newton):
            Z = _lmi_inverse(_lmi(M, sense, d))
            if Z is None:
                # near the optimum the LMI loses double-precision definiteness;
                # d is still strictly feasible, so stop with the certified gap nu/t
                converged = False
                break
            g = sense * t - sense * np.diag(Z) - 1.0 / (d - lo)
            H = Z * Z + np.diag(1.0 / (d - lo) ** 2)
            if hi is not None:
                g += 1.0 / (hi - d)
                H += np.diag(1.0 / (hi - d) ** 2)
            step = -np.linalg.solve(H, g)
            decrement = -g @ step
            steps += 1
            if decrement <= 2e-10:
                break
            f0 = _barrier_value(M, sense, lo, hi, d, t)
            a = 1.0
            while _barrier_value(M, sense, lo, hi, d + a * step, t) > f0 - 0.25 * a * decrement:
                a *= 0.5
                if a < 1e-14:
                    break
            d = d + a * step
        gap = nu / t
        if gap <= rtol * max(abs(d.sum()), 1.0):
            break
        if converged:
            t *= mu
    return DiagLMIResult(d=d, bound=float(d.sum() - sense * nu / t), iterations=steps, cuts=0,
                         converged=converged)


def _lmi_inverse(S, min_pivot_ratio=1e-15):
    """Inverse of a positive definite ``S`` via Cholesky; ``None`` if it is not numerically PD."""
    try:
        c, low = scipy.linalg.cho_factor(S, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return None
    piv = np.diag(c) ** 2
    if piv.min() <= min_pivot_ratio * piv.max():
        return None
    Z = scipy.linalg.cho_solve((c, low), np.eye(S.shape[0]), check_finite=False)
    return 0.5 * (Z + Z.T)


def _solve(M, sense, lower, upper, interior, rtol, max_iter, solver):
    if solver == "barrier":
        return diag_lmi_barrier(M, sense, lower, upper, interior, rtol=rtol)
    if solver == "cutting_plane":
        return diag_lmi_cutting_plane(M, sense, lower, upper, interior, rtol=max(rtol, 1e-7),
                                      max_iter=max_iter)
    raise ValueError(f"unknown solver {solver!r}")


def gershgorin_majorizer(M, floor):
    M = numerics.as_sym(M)
    radius = np.sum(np.abs(M), axis=1) - np.abs(np.diag(M))
    return np.maximum(floor, np.diag(M) + radius)


def solve_diag_majorizer(M, floor=2.0, rtol=1e-9, max_iter=500, solver="barrier"):
    """Minimum-trace diagonal ``d`` with ``diag(d) >= M`` (PSD order) and ``d_i >= floor``.

    Solved by :func:`diag_lmi_barrier` (or :func:`diag_lmi_cutting_plane` with
    ``solver="cutting_plane"``) started inside the Gershgorin point, which is
    returned instead if the solver fails or does worse.
    """
    M = numerics.as_sym(M)
    fallback = gershgorin_majorizer(M, floor)
    interior = fallback + 0.1 * max(numerics.max_abs(M), 1.0)
    try:
        res = _solve(M, +1, floor, None, interior, rtol, max_iter, solver)
    except ConstructionError as exc:
        log.warning("majorizer cutting plane failed (%s); using Gershgorin point", exc)
        return fallback
    if not res.converged:
        log.info("majorizer stopped after %d iterations (gap %.2e)", res.iterations,
                 abs(res.bound - res.d.sum()))
    d = res.d.copy()
    # eigh round-off can leave lambda_min a hair below zero; nudge by the measured gap
    gap = numerics.lambda_min(np.diag(d) - M)
    if gap < 0:
        d = d - gap
    if d.sum() > fallback.sum():
        return fallback
    return d


# ---------------------------------------------------------------------------
# general construction

def construct_general(X, m=2, seed=0, gamma=1.2, floor=2.0, classes=None):
    """General pseudo-knockoff: ``B = gamma Sigma^{-1}`` with each ``B_{C_j C_j}`` replaced
    by a diagonal majorizer of ``gamma (Sigma^{-1})_{C_j C_j}``."""
    design = _design(X)
    _check_shape(design)
    _full_rank(design)
    sigma = design.sigma
    p = design.p
    parts = interleaved_classes(p, m) if classes is None else as_partition(classes, p)
    sigma_inv = numerics.inv_spd(sigma)
    B = gamma * sigma_inv
    for C in parts:
        d = solve_diag_majorizer(gamma * sigma_inv[np.ix_(C, C)], floor=floor)
        B[np.ix_(C, C)] = np.diag(d)
    B = numerics.as_sym(B)
    Xt = build_xtilde_from_B(design.X, sigma, B, rng=make_rng(seed, 3))
    return PseudoKnockoff(Xt=Xt, B=B, method="general", partition=parts, gamma=float(gamma))


# ---------------------------------------------------------------------------
# knockoff baselines

def equicorrelated_s(sigma):
    lmin = numerics.lambda_min(sigma)
    if lmin <= 0:
        raise ConstructionError(f"Sigma is not positive definite (lambda_min = {lmin:.3e})")
    return np.full(sigma.shape[0], min(1.0, 2.0 * lmin))


def sdp_s(sigma, rtol=1e-9, max_iter=500, margin=1e-6, solver="barrier"):
    """Maximize ``sum(s)`` subject to ``0 <= s <= 1`` and ``diag(s) <= 2 Sigma``.

    The solver output (feasible, near the boundary) is shrunk until ``2 Sigma - diag(s)`` has ``lambda_min >= margin * lambda_min(2 Sigma)``;
    strict feasibility keeps ``[X Xt]`` full rank.
    """
    sigma = numerics.as_sym(sigma)
    two_sigma = 2.0 * sigma
    lmin_m = numerics.lambda_min(two_sigma)
    if lmin_m <= 0:
        raise ConstructionError(f"Sigma is not positive definite (lambda_min = {lmin_m / 2:.3e})")
    interior = np.full(sigma.shape[0], 0.5 * min(1.0, lmin_m))
    res = _solve(two_sigma, -1, 0.0, 1.0, interior, rtol, max_iter, solver)
    if not res.converged:
        log.info("knockoff SDP stopped after %d iterations (gap %.2e)", res.iterations,
                 abs(res.bound - res.d.sum()))
    s = np.clip(res.d, 0.0, 1.0)
    target = margin * lmin_m
    for _ in range(60):
        gap = numerics.lambda_min(two_sigma - np.diag(s))
        if gap >= target:
            break
        # concavity: (1-tau)*2Sigma + tau*(2Sigma - diag(s)) has lambda_min >= target
        tau = (lmin_m - target) / (lmin_m - gap)
        s = s * min(tau, 1.0 - 1e-12)
    return s


def construct_knockoff_baseline(X, mode="sdp", seed=0):
    """Fixed-X knockoffs: ``Xt^T Xt = Sigma``, ``X^T Xt = Sigma - diag(s)``."""
    design = _design(X)
    _check_shape(design)
    sigma = design.sigma
    if mode == "equi":
        s = equicorrelated_s(sigma)
    elif mode == "sdp":
        s = sdp_s(sigma)
    else:
        raise ValueError(f"unknown knockoff mode {mode!r}")
    sigma_inv = numerics.inv_spd(sigma)
    Ds = np.diag(s)
    # equals diag(s) (B - Sigma^-1) diag(s) for B = diag(2/s), without dividing by s
    gap = 2.0 * Ds - Ds @ sigma_inv @ Ds
    try:
        L = numerics.chol_psd(gap, tol=1e-10, scale=numerics.max_abs(Ds) + 1e-300)
    except numerics.NotPSDError as exc:
        raise ConstructionError(f"knockoff s-vector infeasible (lambda_min = {exc.eigenvalue:.3e})") from exc
    U = orthonormal_basis_off(design.X, make_rng(seed, 3))
    Xt = design.X - design.X @ (sigma_inv @ Ds) + U @ L.T
    with np.errstate(divide="ignore"):
        B = np.diag(2.0 / s)
    return PseudoKnockoff(Xt=Xt, B=B, method=f"knockoff_{mode}", s=s)


# ---------------------------------------------------------------------------

def construct(X, method, seed=0, group_size=5, m=2, gamma=None, floor=2.0, partition=None):
    """Dispatch on ``method`` (one of :data:`METHODS`)."""
    if method == "orthogonal":
        return construct_orthogonal(X, seed=seed)
    if method == "block_diagonal":
        return construct_block_diagonal(X, partition if partition is not None else group_size,
                                        seed=seed, gamma=gamma)
    if method == "general":
        return construct_general(X, m=m, seed=seed, gamma=1.2 if gamma is None else gamma,
                                 floor=floor, classes=partition)
    if method == "knockoff_equi":
        return construct_knockoff_baseline(X, "equi", seed=seed)
    if method == "knockoff_sdp":
        return construct_knockoff_baseline(X, "sdp", seed=seed)
    raise ValueError(f"unknown construction method {method!r}; expected one of {METHODS}")


def validate_construction(pk: PseudoKnockoff, X):
    """Max residuals of the identities ``pk`` promises.

    Returns a dict of residuals plus ``tolerance`` and ``passed``.  Identity
    residuals must be at most ``1e-8 * (1 + max|Sigma|)``; the inverse-form
    check ``4[(X-Xt)^T(X-Xt)]^{-1} = B`` is relative and must be at most 1e-6.
    """
    X = np.asarray(X.X if isinstance(X, DesignEnsemble) else X, dtype=float)
    Xt = pk.Xt
    sigma = X.T @ X
    cross = X.T @ Xt
    diff = X - Xt
    diff_gram = diff.T @ diff
    tol = IDENTITY_TOL * (1.0 + numerics.max_abs(sigma))
    report = {
        "gram": numerics.max_abs(Xt.T @ Xt - sigma),
        "cross_symmetry": numerics.max_abs(cross - cross.T),
        "orthogonality": numerics.max_abs((X + Xt).T @ diff),
        "b_identity": numerics.max_abs(diff_gram - pk.diff_gram_target()),
    }
    if pk.method == "orthogonal":
        report["cross_zero"] = numerics.max_abs(cross)
    if pk.method == "block_diagonal" and pk.blocks:
        target = np.zeros_like(sigma)
        for g, S_g in zip(pk.partition, pk.blocks):
            target[np.ix_(g, g)] = S_g
        report["block_identity"] = numerics.max_abs(sigma - cross - target)
    if pk.s is not None:
        report["knockoff_cross"] = numerics.max_abs(cross - (sigma - np.diag(pk.s)))
    identity_keys = list(report)

    rel = float("nan")
    if pk.s is None or np.min(pk.s) > 1e-6:
        try:
            est = 4.0 * numerics.inv_spd(diff_gram)
            B = np.diag(2.0 / pk.s) if pk.s is not None else pk.B
            rel = numerics.max_abs(est - B) / numerics.max_abs(B)
        except np.linalg.LinAlgError:
            rel = float("inf")
    report["b_inverse_rel"] = rel
    passed = all(report[k] <= tol for k in identity_keys)
    if not np.isnan(rel):
        passed = passed and rel <= 1e-6
    report["tolerance"] = tol
    report["passed"] = bool(passed)
    return report
