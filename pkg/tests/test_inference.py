import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from ebflow.inference import (PosteriorMeanAccumulator, grid_w1, identity_marginal_nll, kl,
                              posterior_mean, prediction_mse, tv_distance)
from ebflow.model import GridPrior, LinearModel, shrinkage
from ebflow.seqnpmle import SeqObjective, seq_nll

SUPPORT = GridPrior.uniform().support


def prior_from(seed, K=61, alpha=1.0):
    w = np.random.default_rng(seed).dirichlet(np.ones(K) * alpha)
    return GridPrior(np.linspace(-3, 3, K), w)


def test_single_atom_posterior_mean():
    prior = GridPrior.point_mass(SUPPORT, 45)
    est = posterior_mean(prior, [np.random.default_rng(i).normal(size=5) for i in range(4)], 0.3)
    np.testing.assert_allclose(est.theta_hat, SUPPORT[45], atol=1e-15)
    assert est.n_samples_used == 4


def test_symmetric_two_atom_at_zero():
    prior = GridPrior(np.array([-1.0, 1.0]), np.array([0.5, 0.5]))
    assert posterior_mean(prior, [np.zeros(3)], 0.5).theta_hat == pytest.approx(np.zeros(3), abs=1e-15)


def test_identity_monte_carlo_against_exact_posterior():
    # X = I, prior on {-1, 1}: E[theta | y] = tanh(y / s2) for equal weights.
    # phi | y ~ N(m(theta), .) mixture; sample phi exactly and average the shrinkage map.
    r = np.random.default_rng(0)
    s2, tau_sq = 1.0, 0.5
    y = np.array([-0.7, 0.2, 1.5])
    exact = np.tanh(y / s2)
    prior = GridPrior(np.array([-1.0, 1.0]), np.array([0.5, 0.5]))
    n = 20000
    # posterior of theta given y, then phi = theta + z with z | theta, y ~ N(c (y - theta), v)
    c = tau_sq / s2
    v = tau_sq * (s2 - tau_sq) / s2
    p_plus = 1 / (1 + np.exp(-2 * y / s2))
    draws = []
    for _ in range(n):
        theta = np.where(r.random(3) < p_plus, 1.0, -1.0)
        draws.append(theta + c * (y - theta) + np.sqrt(v) * r.standard_normal(3))
    draws = np.array(draws)
    pm = shrinkage(draws.ravel(), prior, np.sqrt(tau_sq)).reshape(draws.shape)
    est = posterior_mean(prior, draws, np.sqrt(tau_sq)).theta_hat
    se = pm.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(est - exact) <= 3 * se)


def test_identity_single_atom_zero():
    prior = GridPrior.point_mass(SUPPORT, 30)
    est = posterior_mean(prior, np.random.default_rng(1).normal(size=(10, 4)), 0.7)
    assert np.all(est.theta_hat == 0.0)


def test_posterior_mean_empty_raises():
    with pytest.raises(ValueError):
        posterior_mean(GridPrior.uniform(), [], 1.0)


def test_posterior_mean_order_invariant():
    r = np.random.default_rng(3)
    it = r.normal(size=(30, 6))
    prior = prior_from(1)
    a = posterior_mean(prior, it, 0.4).theta_hat
    b = posterior_mean(prior, it[::-1], 0.4).theta_hat
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_autocorrelation_of_ar1():
    r = np.random.default_rng(4)
    acc = PosteriorMeanAccumulator(GridPrior.uniform(), 1.0)
    x = np.zeros(3)
    for _ in range(20000):
        x = 0.8 * x + r.standard_normal(3)
        acc.update(x)
    np.testing.assert_allclose(acc.lag1_autocorrelation(), 0.8, atol=0.03)


def test_prediction_mse_examples():
    r = np.random.default_rng(5)
    theta = r.normal(size=8)
    X = r.normal(size=(20, 8))
    assert prediction_mse(theta, theta, X) == 0.0
    assert prediction_mse(np.zeros(8), theta, X) == pytest.approx(1.0)
    assert prediction_mse(2 * theta, theta, X) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        prediction_mse(theta, np.zeros(8), X)


def test_tv_examples():
    b = np.array([0.0, 1.0])
    a = GridPrior(b, np.array([0.6, 0.4]))
    assert tv_distance(a, a) == 0.0
    assert tv_distance(a, GridPrior(b, np.array([0.5, 0.5]))) == pytest.approx(0.1)
    assert tv_distance(GridPrior(b, np.array([1.0, 0])), GridPrior(b, np.array([0, 1.0]))) == 1.0


def test_w1_and_kl_examples():
    b = np.linspace(0, 0.6, 4)
    e1 = GridPrior.point_mass(b, 0)
    e2 = GridPrior.point_mass(b, 1)
    assert grid_w1(e1, e2) == pytest.approx(0.2)
    a = prior_from(2, K=4)
    a = GridPrior(b, a.weights)
    assert kl(a, a) == 0.0
    with pytest.raises(ValueError):
        tv_distance(a, GridPrior.uniform())


@given(st.integers(0, 2**32 - 1))
def test_metric_properties(seed):
    r = np.random.default_rng(seed)
    a, b, c = (GridPrior(SUPPORT, r.dirichlet(np.ones(61) * 0.5)) for _ in range(3))
    assert tv_distance(a, b) == pytest.approx(tv_distance(b, a))
    assert tv_distance(a, c) <= tv_distance(a, b) + tv_distance(b, c) + 1e-12
    assert grid_w1(a, b) <= 2 * a.M * tv_distance(a, b) + 1e-12
    scipy_w1 = stats.wasserstein_distance(SUPPORT, SUPPORT, a.weights, b.weights)
    assert grid_w1(a, b) == pytest.approx(scipy_w1, rel=1e-9, abs=1e-12)
    assert kl(a, b) >= 0


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=10), st.floats(0.01, 5))
def test_shrinkage_range(xs, tau):
    prior = prior_from(7, alpha=0.3)
    pm = shrinkage(np.array(xs), prior, tau)
    assert np.all(pm >= prior.support[0] - 1e-12) and np.all(pm <= prior.support[-1] + 1e-12)


def test_identity_nll_matches_seq_nll():
    y = np.array([0.3, -1.1, 2.4])
    model = LinearModel(np.eye(3), y, 0.8)
    prior = prior_from(9)
    obj = SeqObjective(y, np.sqrt(0.8), prior.support)
    assert identity_marginal_nll(model, prior) == pytest.approx(seq_nll(obj, prior.weights), rel=1e-14)
