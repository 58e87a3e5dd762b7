import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from negsampling.theory import (
    CategoricalPair,
    empirical_risk,
    expected_objective,
    fit_counts,
    fit_single_node,
    maximize_objective,
    optimal_logits,
    random_pair,
    risk_model,
    risk_prediction,
    sublinear_check,
    verify_theory,
)

UNIFORM10 = CategoricalPair(np.full(10, 0.1), np.full(10, 0.1), 1)


def test_equal_distributions_give_zero_logits():
    p = np.array([0.2, 0.3, 0.5])
    np.testing.assert_allclose(optimal_logits(CategoricalPair(p, p, 1)), 0.0, atol=1e-15)


def test_hand_example_matches_numeric_optimum():
    pair = CategoricalPair([0.2, 0.8], [0.1, 0.9], 5)
    assert optimal_logits(pair)[0] == pytest.approx(-np.log(2.5), abs=1e-6)
    np.testing.assert_allclose(maximize_objective(pair), optimal_logits(pair), atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 20), st.sampled_from([1, 5]), st.integers(0, 10**6))
def test_closed_form_is_the_maximizer(N, k, seed):
    pair = random_pair(np.random.default_rng(seed), N, k)
    theta = optimal_logits(pair)
    np.testing.assert_allclose(maximize_objective(pair), theta, atol=1e-4)
    np.testing.assert_allclose(expit(theta), pair.p_d / (pair.p_d + k * pair.p_n), atol=1e-12)
    bumped = theta + np.random.default_rng(seed).normal(scale=0.1, size=N)
    assert expected_objective(bumped, pair) < expected_objective(theta, pair)


def test_optimal_logits_edge_cases():
    th = optimal_logits(CategoricalPair([0.0, 0.0, 1.0], [0.5, 0.0, 0.5], 1))
    assert th[0] == -np.inf and np.isnan(th[1]) and np.isfinite(th[2])
    with pytest.raises(ValueError):
        optimal_logits(CategoricalPair([0.5, 0.5], [1.0, 0.0], 1))


def test_pair_validation():
    with pytest.raises(ValueError):
        CategoricalPair([0.5, 0.6], [0.5, 0.5])
    with pytest.raises(ValueError):
        CategoricalPair([0.5, 0.5], [1.0])
    with pytest.raises(ValueError):
        CategoricalPair([0.5, 0.5], [0.5, 0.5], 0)


# risk


def test_risk_prediction_examples():
    np.testing.assert_allclose(risk_prediction(UNIFORM10, 100), 0.18)
    np.testing.assert_allclose(risk_prediction(UNIFORM10, 1000), 0.018)
    np.testing.assert_allclose(risk_prediction(UNIFORM10, 200), risk_prediction(UNIFORM10, 100) / 2)


@given(st.integers(2, 12), st.sampled_from([1, 3, 5]), st.integers(0, 10**6))
def test_risk_matches_inverse_hessian_identity(N, k, seed):
    pair = random_pair(np.random.default_rng(seed), N, k)
    np.testing.assert_allclose(risk_prediction(pair, 1), 1 / risk_model(pair) - (1 + 1 / k), rtol=1e-9)


def test_risk_errors():
    with pytest.raises(ValueError):
        risk_prediction(UNIFORM10, 0)
    with pytest.raises(ValueError):
        risk_prediction(CategoricalPair([1.0, 0.0], [0.5, 0.5]), 10)


def test_monte_carlo_risk_matches_prediction():
    emp, used = empirical_risk(UNIFORM10, 1000, 500, seed=0)
    assert np.all(used == 500)
    # per outcome: the stated tolerance; pooled over outcomes: tighter
    assert np.all(np.abs(emp / 0.018 - 1) <= 0.2)
    assert abs(emp.mean() / 0.018 - 1) <= 0.15


def test_monte_carlo_risk_falls_with_T():
    mse = [np.nanmean(empirical_risk(UNIFORM10, T, 200, seed=1)[0]) for T in (100, 1000, 10_000)]
    assert mse[0] > mse[1] > mse[2]


def test_monte_carlo_risk_largest_at_rarest_outcome():
    pair = CategoricalPair([0.4, 0.3, 0.2, 0.1], [0.25, 0.25, 0.25, 0.25], 1)
    emp, _ = empirical_risk(pair, 2000, 400, seed=2)
    assert int(np.argmax(emp)) == int(np.argmax(risk_prediction(pair, 2000))) == 3


# fitting


def test_fit_counts_closed_form():
    # stationary point: a (1 - s) = b s, so s = a / (a + b)
    th = fit_counts([3, 1, 0], [1, 1, 2], 4)
    np.testing.assert_allclose(th[:2], [np.log(3), 0.0], atol=1e-8)
    assert np.isnan(th[2])


def test_fit_tiny_sample_is_finite_where_drawn():
    pair = CategoricalPair([0.5, 0.5], [0.5, 0.5], 1)
    for seed in range(20):
        th = fit_single_node(pair, 1, seed)
        pos = np.random.default_rng(seed).multinomial(1, pair.p_d)
        assert np.all(np.isnan(th[pos == 0]))
        assert np.all(np.isfinite(th) | np.isnan(th))


def test_fit_large_T_consistent():
    pair = random_pair(np.random.default_rng(4), 6, 5, concentration=5.0)
    th = fit_single_node(pair, 10**6, seed=0)
    np.testing.assert_allclose(th, optimal_logits(pair), atol=0.01)
    np.testing.assert_array_equal(th, fit_single_node(pair, 10**6, seed=0))


# sub-linear principle


def test_sublinear_examples():
    rep = sublinear_check([0.5, 0.3, 0.2], 0.5)
    assert rep["monotone"] and rep["passed"]
    for alpha in (0.25, 0.5, 0.75):
        rep = sublinear_check([0.5, 0.3, 0.15, 0.05], alpha)
        assert abs(rep["slope"] - (1 - alpha)) < 1e-10
        assert rep["risk_inverse_order"]
    uni = sublinear_check([0.5, 0.3, 0.2], 0.5, uniform_negatives=True)
    assert uni["monotone"] and abs(uni["slope"] - 1.0) < 1e-10 and uni["passed"]


def test_sublinear_ties_reported():
    rep = sublinear_check([0.4, 0.3, 0.3], 0.5)
    assert rep["tie_groups"] == [[1, 2]] and rep["passed"]
    with pytest.raises(ValueError):
        sublinear_check([0.5, 0.5], 1.0)


def test_verify_theory_report():
    rep = verify_theory(T=1000, trials=100, seed=0, num_pairs=20, risk_tolerance=0.35)
    assert set(rep["checks"]) == {"optimal_logits_vs_numeric", "sigmoid_identity",
                                  "risk_prediction_vs_monte_carlo", "large_T_consistency",
                                  "sublinear_principle"}
    assert rep["passed"]
    with pytest.raises(ValueError):
        verify_theory(alpha=0.0)
