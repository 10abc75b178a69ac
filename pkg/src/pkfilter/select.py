"""Knockoff+ thresholding and selection metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SelectionOutcome:
    """Result of thresholding one W vector.

    ``ratio_stat`` is ``#{null, W >= T} / (#{null, W <= -T} + 1)``, the
    quantity whose expectation the theory bounds; it is 0 when ``T`` is infinite.
    """

    T: float
    selected: np.ndarray
    q: float
    fdp: float = float("nan")
    power: float = float("nan")
    ratio_stat: float = float("nan")

    @property
    def n_selected(self):
        return int(self.selected.size)


def knockoff_plus_threshold(W, q=0.2):
    """Smallest ``t`` among the nonzero ``|W_j|`` with
    ``(1 + #{W <= -t}) / max(#{W >= t}, 1) <= q``; ``inf`` if there is none."""
    if not 0 < q < 1:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    W = np.asarray(W, dtype=float)
    cand = np.unique(np.abs(W[W != 0]))
    if cand.size == 0:
        return np.inf
    ws = np.sort(W)
    n = ws.size
    n_pos = n - np.searchsorted(ws, cand, side="left")
    n_neg = np.searchsorted(ws, -cand, side="right")
    ok = (1.0 + n_neg) / np.maximum(n_pos, 1) <= q
    idx = np.flatnonzero(ok)
    return float(cand[idx[0]]) if idx.size else np.inf


def select(W, q=0.2):
    """Threshold ``W`` and return the outcome without ground-truth metrics."""
    W = np.asarray(W, dtype=float)
    T = knockoff_plus_threshold(W, q)
    selected = np.flatnonzero(W >= T) if np.isfinite(T) else np.array([], dtype=int)
    return SelectionOutcome(T=T, selected=selected, q=q)


def evaluate(W, beta, q=0.2, outcome: SelectionOutcome | None = None):
    """Attach FDP, power and the null ratio statistic using the true ``beta``."""
    W = np.asarray(W, dtype=float)
    beta = np.asarray(beta)
    if outcome is None:
        outcome = select(W, q)
    null = beta == 0
    k = int(np.sum(~null))
    sel = np.zeros(W.size, dtype=bool)
    sel[outcome.selected] = True
    false = int(np.sum(sel & null))
    true = int(np.sum(sel & ~null))
    outcome.fdp = false / max(int(sel.sum()), 1)
    outcome.power = true / k if k > 0 else 0.0
    if np.isfinite(outcome.T):
        v_plus = int(np.sum(null & (W >= outcome.T)))
        v_minus = int(np.sum(null & (W <= -outcome.T)))
        outcome.ratio_stat = v_plus / (v_minus + 1.0)
    else:
        outcome.ratio_stat = 0.0
    return outcome
