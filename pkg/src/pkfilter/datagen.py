"""Covariance models, Gaussian designs, sparse signals and responses.

Randomness
----------
All draws come from ``numpy.random.Philox`` (a counter-based generator)
seeded through ``SeedSequence(seed, spawn_key=keys)``.  A stream is identified
by the base seed plus a tuple of integer keys, e.g. ``(grid_index,
trial_index)``, so trials can run in any order or on any worker and still
reproduce the same numbers.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics

COVARIANCE_KINDS = ("identity", "ar", "group", "precision_a", "precision_b", "precision_c")


def make_rng(seed, *keys):
    """Generator for the substream ``(seed, *keys)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed, *keys):
    """A 64-bit integer seed derived from ``(seed, *keys)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class CovarianceModel:
    """Population covariance specification.

    ``kind`` is one of ``identity``, ``ar`` (``Sigma_ij = rho^|i-j|``), ``group``
    (consecutive groups of ``group_size``; ``rho`` within, ``gamma * rho``
    between), ``precision_a`` (block-diagonal precision, blocks of
    ``block_size``), ``precision_b`` (precision ``rho^|i-j|``) and
    ``precision_c`` (equicorrelated precision).
    """

    kind: str
    p: int
    rho: float = 0.0
    gamma: float = 0.0
    group_size: int = 5
    block_size: int = 5

    def __post_init__(self):
        if self.kind not in COVARIANCE_KINDS:
            raise ValueError(f"unknown covariance kind {self.kind!r}; expected one of {COVARIANCE_KINDS}")
        if self.p < 1:
            raise ValueError("p must be positive")

    def with_(self, **changes):
        params = {f: getattr(self, f) for f in self.__dataclass_fields__}
        params.update(changes)
        return CovarianceModel(**params)


def _toeplitz_power(p, rho):
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)


def _block_equicorr(p, size, rho, between=0.0):
    labels = np.arange(p) // size
    same = labels[:, None] == labels[None, :]
    m = np.where(same, rho, between)
    np.fill_diagonal(m, 1.0)
    return m


def build_sigma(model: CovarianceModel):
    """Population covariance matrix for ``model``; raises if it is not PD."""
    p, rho = model.p, model.rho
    kind = model.kind
    if kind == "identity":
        return np.eye(p)
    if kind in ("ar", "precision_b"):
        if not 0.0 <= rho < 1.0:
            raise ValueError(f"{kind} requires rho in [0, 1), got {rho}")
    if kind == "precision_c" and p > 1 and not -1.0 / (p - 1) < rho < 1.0:
        raise ValueError(f"precision_c requires rho in (-1/(p-1), 1), got {rho}")

    if kind == "ar":
        target = _toeplitz_power(p, rho)
    elif kind == "group":
        target = _block_equicorr(p, model.group_size, rho, model.gamma * rho)
    elif kind == "precision_a":
        target = _block_equicorr(p, model.block_size, rho)
    elif kind == "precision_b":
        target = _toeplitz_power(p, rho)
    else:  # precision_c
        target = np.full((p, p), rho)
        np.fill_diagonal(target, 1.0)

    lmin = numerics.lambda_min(target)
    if lmin <= 0:
        what = "precision" if kind.startswith("precision") else "covariance"
        raise ValueError(f"{kind} {what} matrix is not positive definite: lambda_min = {lmin:.3e}")
    if kind.startswith("precision"):
        return numerics.inv_spd(target)
    return target


def precision_target(model: CovarianceModel):
    """The specified precision matrix for ``precision_*`` kinds."""
    if not model.kind.startswith("precision"):
        raise ValueError("precision_target only applies to precision_* kinds")
    return numerics.inv_spd(build_sigma(model))


@dataclass
class DesignEnsemble:
    X: np.ndarray
    sigma: np.ndarray
    seed: int | None = None

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @classmethod
    def from_matrix(cls, X, seed=None, normalize=True):
        X = np.array(X, dtype=float)
        if normalize:
            norms = np.linalg.norm(X, axis=0)
            if np.any(norms == 0):
                raise ValueError("design has an all-zero column")
            X /= norms
        return cls(X=X, sigma=numerics.as_sym(X.T @ X), seed=seed)


def sample_design(model: CovarianceModel, n, seed, p=None):
    """Rows i.i.d. ``N(0, Sigma)``, then columns scaled to unit Euclidean norm."""
    p = model.p if p is None else p
    if p != model.p:
        raise ValueError("p does not match the covariance model")
    if n <= 2 * p:
        raise ValueError(f"need n > 2p, got n={n}, p={p}")
    sigma = build_sigma(model)
    L = np.linalg.cholesky(sigma)
    rng = make_rng(seed, 0)
    Z = rng.standard_normal((n, p))
    return DesignEnsemble.from_matrix(Z @ L.T, seed=seed)


@dataclass
class SignalSpec:
    beta: np.ndarray
    amplitude: float
    support: np.ndarray = field(repr=False)

    @property
    def k(self):
        return int(self.support.size)

    @property
    def nulls(self):
        return np.flatnonzero(self.beta == 0)


def sample_signal(p, k, amplitude, seed, support=None):
    """``k`` coefficients at uniformly random positions, each ``+A`` or ``-A``.

    Pass ``support`` to freeze the positions and redraw only the signs.
    """
    if not 0 <= k <= p:
        raise ValueError(f"need 0 <= k <= p, got k={k}, p={p}")
    if amplitude < 0:
        raise ValueError("amplitude must be non-negative")
    rng = make_rng(seed, 1)
    if support is None:
        support = np.sort(rng.choice(p, size=k, replace=False))
    else:
        support = np.sort(np.asarray(support, dtype=int))
        if support.size != k:
            raise ValueError("frozen support has the wrong size")
    signs = rng.choice(np.array([-1.0, 1.0]), size=k)
    beta = np.zeros(p)
    beta[support] = amplitude * signs
    return SignalSpec(beta=beta, amplitude=float(amplitude), support=support)


def sample_noise(n, seed):
    return make_rng(seed, 2).standard_normal(n)


def sample_response(X, beta, seed, noiseless=False):
    """``y = X beta + eps`` with ``eps ~ N(0, I_n)`` drawn from the seed's noise stream."""
    X = np.asarray(X, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if X.ndim != 2 or beta.shape != (X.shape[1],):
        raise ValueError(f"shape mismatch: X {X.shape}, beta {beta.shape}")
    mean = X @ beta
    if noiseless:
        return mean
    return mean + sample_noise(X.shape[0], seed)
