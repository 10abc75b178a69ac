import math

import numpy as np
import pytest
from scipy import integrate

from pkfilter import theory
from pkfilter.datagen import CovarianceModel, sample_design


def test_bound_limit_and_dual_form():
    assert theory.bound_B(3, 7, 2.0, 1e-9, 0.0) == pytest.approx(1.0, abs=1e-8)
    rng = np.random.default_rng(0)
    for _ in range(200):
        x = float(rng.integers(0, 30))
        y = x + float(rng.integers(0, 30))
        t = 1 + 4 * rng.random() + 1e-3
        xi = 0.01 + rng.random()
        s = 10 * rng.random()
        a = theory.bound_B(x, y, t, xi, s)
        b = theory.bound_B_direct(x, y, t, xi, s)
        assert abs(a - b) <= 1e-12 * b


def test_bound_monotone_in_x():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        x = float(rng.integers(0, 40))
        y = x + float(rng.integers(1, 40))
        t = 1.05 + 4 * rng.random()
        xi = 0.01 + rng.random()
        s = 10 * rng.random()
        dx = float(rng.integers(1, int(y - x) + 1))
        assert theory.log_bound_B(x + dx, y, t, xi, s) <= theory.log_bound_B(x, y, t, xi, s) + 1e-12


def test_bound_query_validation():
    assert theory.BoundQuery(1, 2, 2.0, 0.5, 1.0).value() == pytest.approx(theory.bound_B(1, 2, 2.0, 0.5, 1.0))
    for args in ((2, 1, 2.0, 0.5, 1.0), (1, 2, 1.0, 0.5, 1.0), (1, 2, 2.0, 0.0, 1.0)):
        with pytest.raises(ValueError):
            theory.BoundQuery(*args)


def test_xi_star():
    assert theory.xi_star(0, 1, 2.0, 1.0) == pytest.approx(2.0)
    assert theory.xi_star(2, 5, 2.0, 0.5) == pytest.approx(0.0)
    x, y, t, s = 10.0, 25.0, 3.0, 9.0
    xs = theory.xi_star(x, y, t, s)
    mid = theory.surrogate_B(x, y, t, xs, s)
    assert mid <= theory.surrogate_B(x, y, t, 0.9 * xs, s)
    assert mid <= theory.surrogate_B(x, y, t, 1.1 * xs, s)
    assert theory.surrogate_B(x, y, t, xs, s) >= theory.bound_B(x, y, t, xs, s)


def test_hoeffding_tail():
    assert theory.hoeffding_tail(1, 1, 1 + 1e-12) == pytest.approx(math.exp(-0.5))
    vals = [theory.hoeffding_tail(i, 1, 2.0) for i in range(10, 400, 10)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    res = theory.mc_hoeffding_check(200, 1, 2.0)
    assert res["passed"]


def test_tail_ratio():
    r = theory.tail_ratio(2.4, 0.2)
    assert r == pytest.approx((math.exp(0.2) + math.exp(-0.48)) / 2)
    assert r < 0.93


def test_geometric_tail_matches_sum():
    t, xi, x0 = 3.0, 0.2, 40.0
    direct = sum(theory.bound_B(x0 + i, x0 + i + 1, t, xi, t) for i in range(5000))
    assert theory.geometric_tail(t, xi, x0) == pytest.approx(direct, rel=1e-10)
    with pytest.raises(ValueError):
        theory.geometric_tail(1.1, 2.0, 1.0)


def test_small_t_extra_is_one_half():
    plan = theory.BoundPlan()
    for t in (2.4, 3.0, 3.995):
        row = theory.distribution_bound(t, plan)
        assert row["regime"] == "small"
        assert row["raw"] - row["slices"] - row["tail"] == pytest.approx(0.5)
    assert theory.distribution_bound(4.0, plan)["regime"] == "large"


def test_slices_are_increasing():
    seq, terms, xis = theory.slice_sequence(5.0, theory.BoundPlan())
    assert seq[0] == 5.0 and seq[-1] > 150
    assert np.all(np.diff(seq) > 0)
    assert np.all(terms >= 0) and np.all(xis > 0)


def test_far_tail_integral():
    plan = theory.BoundPlan()
    num, _ = integrate.quad(lambda t: theory.far_distribution_bound(t, plan), plan.t_max, np.inf)
    assert theory.far_tail_integral(plan) >= num
    assert theory.far_tail_integral(plan) < 1e-3


def test_pipeline_coarse_plan():
    plan = theory.BoundPlan(t_min=2.4, t_max=15.0, t_step=0.5)
    cert = theory.sup_bound_pipeline(plan)
    assert cert["envelope_nonincreasing"]
    env = [r["envelope"] for r in cert["rows"]]
    assert env[0] <= 1.0
    assert cert["constant"] == pytest.approx(plan.t_min + cert["grid_integral"] + cert["far_tail_integral"])
    assert cert["uncertified_right_endpoint_sum"] <= cert["constant"]


def test_pipeline_jobs_invariant():
    plan = theory.BoundPlan(t_step=1.0)
    a = theory.sup_bound_pipeline(plan, n_jobs=1)
    b = theory.sup_bound_pipeline(plan, n_jobs=2)
    assert a["constant"] == b["constant"]


def test_null_sign_model():
    with pytest.raises(ValueError):
        theory.NullSignModel((3,), p_positive=1.0)
    with pytest.raises(ValueError):
        theory.NullSignModel((3, 4), coupling="copies")
    m = theory.NullSignModel((4, 4, 4), coupling="copies")
    s = m.sample(5, np.random.default_rng(0))
    assert s.shape == (5, 12)
    assert np.array_equal(s[:, 0], s[:, 1]) and np.array_equal(s[:, 1], s[:, 2])
    assert m.tie_blocks.tolist() == [3, 6, 9, 12]


def test_fixed_t_exact_values():
    est, se = theory.mc_fixed_t_expectation(theory.NullSignModel((2,)), 100_000, seed=3)
    assert abs(est - 0.75) <= 3 * se
    est, se = theory.mc_fixed_t_expectation(theory.NullSignModel((6,)), 100_000, seed=3)
    assert abs(est - (1 - 2.0 ** -6)) <= 3 * se
    est, se = theory.mc_fixed_t_expectation(theory.NullSignModel((1,) * 30), 100_000, seed=3)
    assert est <= 1 + 3 * se


def test_mc_is_seeded():
    m = theory.NullSignModel((20,) * 2)
    assert theory.mc_sup_ratio(m, 2000, seed=1) == theory.mc_sup_ratio(m, 2000, seed=1)


def test_mgf_check():
    assert theory.mc_mgf_check(theory.NullSignModel((10,) * 4), 0.2, 2.0, 8, 40)["passed"]
    assert theory.mgf_bound(0.0, 2.0, 3, 5, 1) == 1.0


def test_orthant_prob():
    assert theory.orthant_prob(0.0) == pytest.approx(0.25)
    assert theory.orthant_prob(0.5) == pytest.approx(1 / 3)
    assert theory.orthant_prob(1.0) == pytest.approx(0.5)
    for mu in (-0.7, 0.5, 0.9):
        cov = [[1, mu], [mu, 1]]
        inv = np.linalg.inv(cov)
        norm = 1 / (2 * np.pi * np.sqrt(np.linalg.det(cov)))
        f = lambda a, b: norm * np.exp(-0.5 * np.array([a, b]) @ inv @ np.array([a, b]))
        num, _ = integrate.dblquad(f, 0, np.inf, 0, np.inf, epsabs=1e-10)
        assert abs(num - theory.orthant_prob(mu)) <= 1e-6
    with pytest.raises(ValueError):
        theory.orthant_prob(1.5)


def test_lemma_cov_bound():
    assert theory.lemma_cov_bound_check([0.0]) == 0.0
    lhs = math.asin(0.5) / (2 * math.pi)
    rhs = 0.5 / (2 * math.pi) + 1.5 * 0.25
    assert lhs == pytest.approx(1 / 12) and rhs == pytest.approx(0.4546, abs=1e-4)
    assert theory.lemma_cov_bound_check() <= 1e-12


def test_thm_ort_identity_bound():
    Q, _ = np.linalg.qr(np.random.default_rng(2).standard_normal((80, 20)))
    rep = theory.thm_ort_bound_check(Q, trials=2000, delta_grid=(0.5,), j_grid=(10,))
    row = rep["rows"][0]
    assert row["lambda_max"] == pytest.approx(1.0)
    assert row["bound"] == pytest.approx((1 + 3 * np.pi) / (np.pi * 0.25 * 10))
    assert rep["passed"]


def test_thm_ort_diagonally_dominant():
    d = sample_design(CovarianceModel("ar", 30, rho=0.2), 100, seed=4)
    rep = theory.thm_ort_bound_check(d.X, trials=4000, delta_grid=(0.5,), j_grid=(5, 20))
    for row in rep["rows"]:
        assert row["var_v_plus"] <= row["var_bound_diag_dominant"]
        assert row["lambda_max"] < row["j"]


def test_mgf_spot_checks():
    rng = np.random.default_rng(7)
    for k in range(20):
        m = int(rng.integers(1, 5))
        size = int(rng.integers(3, 12))
        coupling = "copies" if k % 2 else "independent"
        model = theory.NullSignModel((size,) * m, coupling)
        j = int(rng.integers(2, model.n + 1))
        i = int(rng.integers(1, j + 1))
        theta = float(rng.uniform(0.05, 0.4))
        t = float(rng.uniform(1.2, 4.0))
        assert theory.mc_mgf_check(model, theta, t, i, j, trials=20_000, seed=k)["passed"]


def test_orthant_gauss_legendre_grid():
    # P(Z1>0, Z2>0) = 1/4 + (1/2pi) int_0^{asin mu} d phi; check against the density integral
    nodes, weights = np.polynomial.legendre.leggauss(200)
    for mu in np.linspace(-0.95, 0.95, 21):
        # integrate the density over the quadrant in polar coordinates, radial part in closed form
        a, b = 0.0, np.pi / 2
        phi = 0.5 * (b - a) * nodes + 0.5 * (b + a)
        q = (1 - mu * np.sin(2 * phi)) / (1 - mu * mu)
        val = 0.5 * (b - a) * np.sum(weights / (2 * np.pi * math.sqrt(1 - mu * mu) * q))
        assert abs(val - theory.orthant_prob(mu)) <= 1e-6
