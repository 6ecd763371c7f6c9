import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bnca.bnca_core import GaussianBelief
from bnca.dataset import Dataset
from bnca.eigenbasis import EigenBasis, pair_feature, top_eigenvectors
from bnca.posterior import (
    class_posterior_gamma,
    distance_belief,
    map_metric,
    predictive_mcmc,
    predictive_mcmc_batch,
    sample_gamma,
)


def _random_belief(seed, d=4):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(d, d))
    return GaussianBelief(rng.normal(size=d), B @ B.T + 0.1 * np.eye(d))


def test_distance_belief_examples():
    post = _random_belief(0)
    b = distance_belief(post, np.zeros(4))
    assert (b.mean, b.variance) == (0.0, 0.0)
    iso = GaussianBelief(np.ones(3), 0.3 * np.eye(3))
    w = np.array([1.0, 2.0, 0.5])
    assert distance_belief(iso, w).variance == pytest.approx(0.3 * (w @ w))


def test_distance_belief_long_hand():
    post = _random_belief(1)
    w = np.abs(np.random.default_rng(2).normal(size=4))
    mean = sum(w[i] * post.mean[i] for i in range(4))
    var = sum(w[i] * post.cov[i, j] * w[j] for i in range(4) for j in range(4))
    b = distance_belief(post, w)
    assert b.mean == pytest.approx(mean, rel=1e-13)
    assert b.variance == pytest.approx(var, rel=1e-13)
    with pytest.raises(ValueError):
        distance_belief(post, np.ones(3))


def test_map_metric_unit_weights_is_projector():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(20, 5))
    basis = top_eigenvectors(X, 3)
    mm = map_metric(GaussianBelief(np.ones(3), 0.01 * np.eye(3)), basis)
    A = mm.metric.a
    np.testing.assert_allclose(A @ A, A, atol=1e-12)
    np.testing.assert_allclose(A, basis.vectors @ basis.vectors.T, atol=1e-12)
    assert mm.clamped == 0
    diff = X[0] - X[1]
    assert diff @ A @ diff == pytest.approx(np.sum(basis.project(diff) ** 2))


def test_map_metric_clamps_negative_axis():
    basis = EigenBasis(np.eye(3), np.ones(3))
    mm = map_metric(GaussianBelief(np.array([0.5, -0.2, 1.0]), 0.01 * np.eye(3)), basis)
    assert mm.clamped == 1
    np.testing.assert_allclose(np.diag(mm.metric.a), [0.5, 0.0, 1.0])
    assert np.all(mm.projection[1] == 0)


def test_map_metric_distance_identity():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(40, 6))
    basis = top_eigenvectors(X, 4)
    m = np.abs(rng.normal(size=4))
    mm = map_metric(GaussianBelief(m, 0.01 * np.eye(4)), basis)
    for _ in range(100):
        i, j = rng.choice(40, size=2, replace=False)
        lhs = pair_feature(basis, X[i], X[j]) @ m
        rhs = np.sum(mm.transform(X[i] - X[j]) ** 2)
        assert abs(lhs - rhs) < 1e-10


def test_sampling_vanishing_variance():
    post = GaussianBelief(np.array([0.1, 0.2, -0.3]), 1e-16 * np.eye(3))
    g = sample_gamma(post, 50, seed=1)
    assert np.abs(g - post.mean).max() < 1e-6


def test_sampling_law_of_large_numbers():
    post = _random_belief(5)
    T = 100_000
    g = sample_gamma(post, T, seed=7)
    sigma = np.sqrt(np.diag(post.cov))
    assert np.all(np.abs(g.mean(axis=0) - post.mean) < 4 * sigma / np.sqrt(T))
    np.testing.assert_allclose(np.cov(g.T), post.cov, rtol=0.05, atol=0.05 * sigma.max() ** 2)


def test_sampling_deterministic():
    post = _random_belief(6)
    assert np.array_equal(sample_gamma(post, 10, seed=3), sample_gamma(post, 10, seed=3))
    assert not np.array_equal(sample_gamma(post, 10, seed=3), sample_gamma(post, 10, seed=4))
    with pytest.raises(ValueError):
        sample_gamma(post, 0)


def _toy():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(12, 3))
    train = Dataset(X, np.arange(12) % 3, 3)
    basis = top_eigenvectors(X, 3)
    return train, basis, rng.normal(size=3), np.array([0, 2, 4, 5, 7, 11])


def test_predictive_degenerate_posterior_equals_plug_in():
    train, basis, q, ids = _toy()
    post = GaussianBelief(np.array([0.4, 0.1, 0.9]), 1e-12 * np.eye(3))
    plug = class_posterior_gamma(q, train, ids, basis, post.mean)
    for T in (1, 50):
        assert np.abs(predictive_mcmc(q, train, ids, basis, post, T=T, seed=2) - plug).max() < 1e-6


def test_predictive_equal_distances_gives_class_counts():
    # the four corners (+-1, +-1) give the origin identical squared coordinate differences
    X = np.array([[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0], [5.0, 5.0]])
    train = Dataset(X, [0, 0, 0, 1, 1], 2)
    basis = EigenBasis(np.eye(2), np.ones(2))
    post = _random_belief(9, d=2)
    p = predictive_mcmc(np.zeros(2), train, np.arange(4), basis, post, T=200, seed=0)
    np.testing.assert_allclose(p, [0.75, 0.25], atol=1e-12)


def test_predictive_sample_count_consistency():
    train, basis, q, ids = _toy()
    post = GaussianBelief(np.array([0.4, 0.1, 0.9]), 0.05 * np.eye(3))
    a = predictive_mcmc(q, train, ids, basis, post, T=10_000, seed=1)
    b = predictive_mcmc(q, train, ids, basis, post, T=20_000, seed=2)
    assert np.abs(a - b).max() < 0.02


def test_batch_matches_single_queries():
    train, basis, _, _ = _toy()
    rng = np.random.default_rng(10)
    Q = rng.normal(size=(4, 3))
    ids = np.array([rng.choice(12, size=5, replace=False) for _ in range(4)])
    post = _random_belief(11, d=3)
    batch = predictive_mcmc_batch(Q, train, ids, basis, post, T=300, seed=5)
    gammas = sample_gamma(post, 300, seed=5)
    for r in range(4):
        np.testing.assert_allclose(batch[r], predictive_mcmc(Q[r], train, ids[r], basis, post, gammas=gammas))


@settings(deadline=None, max_examples=30)
@given(st.integers(0, 2**32 - 1), st.integers(1, 50))
def test_predictive_is_distribution(seed, T):
    train, basis, _, ids = _toy()
    rng = np.random.default_rng(seed)
    post = _random_belief(seed % 1000, d=3)
    p = predictive_mcmc(rng.normal(size=3) * 3, train, ids, basis, post, T=T, seed=seed)
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-9
    assert distance_belief(post, np.abs(rng.normal(size=3))).variance >= 0
