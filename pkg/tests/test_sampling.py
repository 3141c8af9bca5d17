"""Hypergeometric machinery: exact PMF, sampling, bounds, grid selection."""
import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gossipsim.numerics import RngStream
from gossipsim.sampling import (
    HypergeometricParams,
    InfeasibleGridError,
    SelectionPlan,
    exact_max_quantile,
    hypergeom_cdf,
    hypergeom_pmf,
    hypergeom_pmf_exact,
    hypergeom_sample,
    hypergeom_sample_array,
    kl_bernoulli,
    log_bound_s,
    sample_neighbors,
    select_hyperparameters,
    simulate_b_hat,
    threshold_s,
)


def enumeration_pmf(population, successes, draws, k) -> Fraction:
    """Independent oracle: count draws-subsets with exactly k marked items."""
    marked = set(range(successes))
    hits = sum(
        1
        for subset in itertools.combinations(range(population), draws)
        if sum(1 for i in subset if i in marked) == k
    )
    return Fraction(hits, math.comb(population, draws))


def test_pmf_examples():
    p = HypergeometricParams(9, 3, 4)
    assert hypergeom_pmf_exact(p, 0) == Fraction(15, 126)
    assert hypergeom_pmf_exact(p, 3) == Fraction(6, 126)
    assert hypergeom_pmf(HypergeometricParams(11, 0, 5), 0) == 1.0


def test_pmf_sums_to_one_and_cdf_monotone():
    p = HypergeometricParams(12, 5, 7)
    lo, hi = p.support
    total = sum(hypergeom_pmf_exact(p, k) for k in range(lo, hi + 1))
    assert total == 1
    cdfs = [hypergeom_cdf(p, k) for k in range(lo, hi + 1)]
    assert all(a <= b for a, b in zip(cdfs, cdfs[1:]))
    assert cdfs[-1] == 1.0


def test_pmf_exact_against_subset_enumeration_small():
    for population in range(1, 8):
        for successes in range(population + 1):
            for draws in range(population + 1):
                p = HypergeometricParams(population, successes, draws)
                for k in range(draws + 1):
                    assert hypergeom_pmf_exact(p, k) == enumeration_pmf(
                        population, successes, draws, k
                    )


def test_pmf_k_out_of_range_rejected():
    p = HypergeometricParams(9, 3, 4)
    with pytest.raises(ValueError):
        hypergeom_pmf(p, 5)
    with pytest.raises(ValueError):
        hypergeom_pmf(p, -1)


def test_params_validation():
    with pytest.raises(ValueError):
        HypergeometricParams(5, 6, 1)
    with pytest.raises(ValueError):
        HypergeometricParams(5, 1, 6)


def test_sample_degenerate_cases():
    assert hypergeom_sample(HypergeometricParams(10, 0, 4), RngStream(0)) == 0
    assert hypergeom_sample(HypergeometricParams(10, 3, 10), RngStream(0)) == 3


def test_sample_mean_and_support():
    p = HypergeometricParams(9, 3, 4)
    gen = RngStream(1).generator()
    draws = hypergeom_sample_array(p, 1_000_000, gen)
    lo, hi = p.support
    assert draws.min() >= lo and draws.max() <= hi
    assert abs(draws.mean() - 4 * 3 / 9) < 0.01


def test_sample_pmf_within_three_standard_errors():
    p = HypergeometricParams(9, 3, 4)
    n_draws = 200_000
    singles = np.array(
        [hypergeom_sample(p, RngStream(2).substream(j)) for j in range(2000)]
    )
    bulk = hypergeom_sample_array(p, n_draws, RngStream(3).generator())
    for draws, count in ((singles, 2000), (bulk, n_draws)):
        for k in range(p.support[0], p.support[1] + 1):
            prob = hypergeom_pmf(p, k)
            emp = np.mean(draws == k)
            se = math.sqrt(prob * (1 - prob) / count)
            assert abs(emp - prob) <= 4 * se + 1e-9


def test_kl_bernoulli_examples():
    assert kl_bernoulli(0.3, 0.3) == 0.0
    assert abs(kl_bernoulli(0.5, 0.1) - 0.510826) < 1e-6
    assert abs(kl_bernoulli(1.0, 0.5) - math.log(2)) < 1e-12
    assert kl_bernoulli(0.0, 0.4) > 0.0
    with pytest.raises(ValueError):
        kl_bernoulli(0.5, 0.0)
    with pytest.raises(ValueError):
        kl_bernoulli(0.5, 1.0)


@given(
    st.floats(0.0, 1.0),
    st.floats(0.01, 0.99),
)
@settings(max_examples=200, deadline=None)
def test_kl_bernoulli_nonnegative(alpha, beta):
    val = kl_bernoulli(alpha, beta)
    assert val >= 0.0
    if abs(alpha - beta) > 1e-9:
        assert val > 0.0


def brute_force_threshold(n, b, ratio, T, h_count, p):
    """Independent direct scan of the threshold inequality over s = 1..n-1."""
    log_term = math.log(T * h_count / (1 - p))
    beta = b / (n - 1)
    for s in range(1, n):
        b_hat = math.ceil(ratio * s)
        if b_hat > s:
            continue
        r = b_hat / s
        if r <= beta or r >= 1:
            continue
        if s >= log_term / kl_bernoulli(r, beta):
            return s, b_hat, False
    return n - 1, min(b, n - 1), True


def test_threshold_s_matches_brute_force_oracle():
    cases = [
        (100, 10, 0.5, 200, 90, 0.95),
        (50, 5, 0.4, 100, 45, 0.9),
        (200, 30, 0.45, 500, 170, 0.99),
        (20, 3, 0.49, 2000, 17, 0.95),
    ]
    for n, b, ratio, T, h, p in cases:
        got = threshold_s(n, b, ratio, T, h, p)
        s, bh, capped = brute_force_threshold(n, b, ratio, T, h, p)
        assert (got.s, got.b_hat, got.capped) == (s, bh, capped)
        assert got.s <= n - 1


def test_threshold_s_no_adversaries():
    r = threshold_s(10, 0, 0.5, 100, 10, 0.95)
    assert (r.s, r.b_hat, r.capped) == (1, 0, False)


def test_threshold_s_caps_at_n_minus_1():
    # tiny n and huge T: no s < n-1 can satisfy the inequality
    r = threshold_s(6, 2, 0.45, 10**9, 4, 0.999)
    assert r.capped and r.s == 5


def test_log_bound_paper_point():
    # b/n = 0.1 via n=100, b=10; coefficient max(1/0.4^2, 30) = 30
    assert log_bound_s(100, 10, 200, 90, 0.95) == 428


def test_log_bound_structure():
    base = log_bound_s(100, 10, 200, 90, 0.95)
    assert log_bound_s(100, 10, 400, 90, 0.95) >= base  # monotone in T
    doubled = log_bound_s(200, 20, 200, 180, 0.95)  # fixed b/n, |H| scaled with n
    assert doubled - base <= math.ceil(30 * math.log(2)) + 1
    with pytest.raises(ValueError):
        log_bound_s(100, 0, 200, 90, 0.95)
    with pytest.raises(ValueError):
        log_bound_s(100, 50, 200, 50, 0.95)


def test_simulate_b_hat_within_support_and_deterministic():
    a = simulate_b_hat(30, 6, 15, 50, 4, RngStream(5))
    b = simulate_b_hat(30, 6, 15, 50, 4, RngStream(5))
    np.testing.assert_array_equal(a, b)
    assert np.all(a >= 0) and np.all(a <= 6)


def test_exact_max_quantile_consistent_with_simulation():
    # the p=0.95 quantile of the max should rarely be exceeded in simulation
    n, b, s, T = 30, 6, 15, 200
    q = exact_max_quantile(n, b, s, T, 0.95)
    sims = simulate_b_hat(n, b, s, T, 40, RngStream(6))
    assert np.mean(sims > q) <= 0.2
    assert exact_max_quantile(n, b, s, T, 0.9999) >= q


def test_select_hyperparameters_b_zero():
    res = select_hyperparameters(100, 0, 200, [10, 5, 15], 5, 0.45, RngStream(7))
    assert (res.s, res.b_hat) == (5, 0)


def test_select_hyperparameters_output_contract():
    res = select_hyperparameters(30, 6, 50, [5, 10, 15], 5, 0.45, RngStream(8))
    assert res.effective_fraction <= 0.45
    grid_ss = [row[0] for row in res.table]
    assert grid_ss == sorted(grid_ss)
    # grid-minimal: every smaller grid s must have violated the target
    for s, bh, kappa in res.table:
        if s < res.s:
            assert kappa > 0.45


def test_select_hyperparameters_infeasible_grid():
    with pytest.raises(InfeasibleGridError) as exc:
        select_hyperparameters(30, 6, 200, [1, 2], 5, 0.45, RngStream(9))
    assert len(exc.value.table) == 2


def test_select_hyperparameters_quantile_method():
    res = select_hyperparameters(
        30, 6, 200, [15], 5, 0.45, RngStream(10), method="quantile"
    )
    assert res.s == 15
    assert res.b_hat == exact_max_quantile(30, 6, 15, 200, 0.95)


def test_sample_neighbors_basic_contract():
    for self_id in range(5):
        got = sample_neighbors(5, 4, self_id, RngStream(11).substream(self_id))
        assert sorted(got.tolist()) == [j for j in range(5) if j != self_id]
    with pytest.raises(ValueError):
        sample_neighbors(5, 5, 0, RngStream(0))


@given(st.integers(2, 30), st.data())
@settings(max_examples=100, deadline=None)
def test_sample_neighbors_property(n, data):
    s = data.draw(st.integers(1, n - 1))
    self_id = data.draw(st.integers(0, n - 1))
    seed = data.draw(st.integers(0, 1000))
    got = sample_neighbors(n, s, self_id, RngStream(seed))
    vals = got.tolist()
    assert len(vals) == len(set(vals)) == s
    assert self_id not in vals
    assert all(0 <= v < n for v in vals)
    assert vals == sorted(vals)


def test_sample_neighbors_inclusion_probability():
    counts = np.zeros(5)
    trials = 100_000
    for j in range(trials):
        for v in sample_neighbors(5, 2, 0, RngStream(12).substream(j)):
            counts[v] += 1
    probs = counts[1:] / trials
    assert np.all(np.abs(probs - 0.5) < 0.01)


def test_selection_plan_validation_and_derived_fields():
    plan = SelectionPlan(n=30, b=6, s=15, b_hat=6, T=200)
    assert plan.num_honest == 24
    assert plan.h_hat == 10
    assert plan.effective_fraction == 6 / 16
    assert plan.feasible
    assert plan.h_hat > plan.s / 2
    with pytest.raises(ValueError):
        SelectionPlan(n=30, b=15, s=15, b_hat=6, T=200)
    with pytest.raises(ValueError):
        SelectionPlan(n=30, b=6, s=0, b_hat=0, T=200)
    with pytest.raises(ValueError):
        SelectionPlan(n=30, b=6, s=15, b_hat=7, T=200)


def test_gamma_consistency_of_threshold_plan():
    # a plan from the threshold rule should violate its event rarely
    p = 0.9
    res = threshold_s(40, 4, 0.5, 20, 36, p)
    assert not res.capped
    trials = math.ceil(20 / (1 - p))
    params = HypergeometricParams(39, 4, res.s)
    violations = 0
    for j in range(trials):
        gen = RngStream(13).substream(j).generator()
        draws = hypergeom_sample_array(params, 36 * 20, gen)
        violations += int(draws.max() > res.b_hat)
    frac = violations / trials
    sigma = math.sqrt((1 - p) * p / trials)
    assert frac <= (1 - p) + 3 * sigma
