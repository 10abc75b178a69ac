import numpy as np
import pytest

from pkfilter.select import evaluate, knockoff_plus_threshold, select


def brute_threshold(W, q):
    cands = sorted({abs(w) for w in W if w != 0})
    for t in cands:
        if (1 + sum(w <= -t for w in W)) / max(sum(w >= t for w in W), 1) <= q:
            return t
    return np.inf


def test_threshold_example():
    W = np.array([3.0, 2.0, 1.0, -1.0])
    assert knockoff_plus_threshold(W, 0.5) == 2.0
    assert select(W, 0.5).selected.tolist() == [0, 1]


def test_threshold_edge_cases():
    assert knockoff_plus_threshold(-np.arange(1.0, 5.0), 0.2) == np.inf
    assert select(-np.arange(1.0, 5.0), 0.2).n_selected == 0
    assert knockoff_plus_threshold(np.array([5.0]), 0.2) == np.inf
    assert knockoff_plus_threshold(np.zeros(4), 0.2) == np.inf
    with pytest.raises(ValueError):
        knockoff_plus_threshold(np.ones(3), 1.5)


def test_threshold_matches_brute_force_small():
    rng = np.random.default_rng(0)
    for _ in range(200):
        W = np.round(rng.standard_normal(rng.integers(1, 15)) * 3, 1) + 0.5
        q = rng.choice([0.1, 0.2, 0.3, 0.5])
        assert knockoff_plus_threshold(W, q) == brute_threshold(W, q)


def test_evaluate_metrics():
    W = np.array([4.0, 3.0, 2.0, 1.0, 0.0, 0.0, 0.0, 0.0])
    beta = np.array([1.0, 0, 0, 0, 0, 0, 0, 1.0])
    out = evaluate(W, beta, q=0.5)
    sel = set(out.selected.tolist())
    false = len(sel & {1, 2, 3, 4, 5, 6})
    assert out.fdp == pytest.approx(false / len(sel))
    assert out.power == pytest.approx(len(sel & {0, 7}) / 2)


def test_evaluate_fdp_two_thirds():
    W = np.array([3.0, 3.0, 3.0, 0.0])
    beta = np.array([1.0, 0.0, 0.0, 1.0])
    out = evaluate(W, beta, q=0.5)
    assert out.selected.tolist() == [0, 1, 2]
    assert out.fdp == pytest.approx(2 / 3)
    assert out.power == pytest.approx(0.5)
    assert out.ratio_stat == pytest.approx(2.0)


def test_evaluate_infinite_threshold():
    out = evaluate(np.array([-1.0, 2.0]), np.array([1.0, 0.0]), q=0.2)
    assert out.T == np.inf
    assert (out.fdp, out.power, out.ratio_stat) == (0.0, 0.0, 0.0)


def test_evaluate_no_signals():
    out = evaluate(np.array([5.0, 4.0, 3.0, 2.0, 1.0]), np.zeros(5), q=0.5)
    assert out.power == 0.0


from hypothesis import given, settings, strategies as st


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(-8, 8).map(lambda v: v / 2), min_size=1, max_size=20),
       st.sampled_from([0.1, 0.2, 0.3, 0.5]))
def test_threshold_property(values, q):
    W = np.array(values)
    T = knockoff_plus_threshold(W, q)
    assert T == brute_threshold(W, q)
    if np.isfinite(T):
        assert (1 + np.sum(W <= -T)) / max(np.sum(W >= T), 1) <= q


def test_threshold_monotone_in_q_and_scale_equivariant():
    rng = np.random.default_rng(3)
    for _ in range(200):
        W = np.round(rng.standard_normal(12) * 2 + 0.8, 2)
        Ts = [knockoff_plus_threshold(W, q) for q in (0.1, 0.2, 0.3, 0.5)]
        assert all(b <= a for a, b in zip(Ts, Ts[1:]))
        c = 3.0
        assert knockoff_plus_threshold(c * W, 0.3) == c * knockoff_plus_threshold(W, 0.3)
        assert select(c * W, 0.3).selected.tolist() == select(W, 0.3).selected.tolist()
