import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bnca.dataset import Dataset, make_blobs
from bnca.nca import (
    EPS_FLOOR,
    MahalanobisMetric,
    metric_gradient,
    nca_class_posterior,
    nca_gradient,
    nca_objective,
    neighbor_probs,
    project_psd,
    scatter_terms,
    train_nca,
)
from bnca.neighbors import NeighborGraph, build_graph
from oracles import central_difference, nca_objective_loop, nca_probs_loop


def two_triangles():
    tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3) / 2]])
    X = np.vstack([tri, tri + 50.0])
    return Dataset(X, [0, 0, 0, 1, 1, 1], 2)


def random_instance(seed, n=15, dim=5, k=4, classes=3):
    rng = np.random.default_rng(seed)
    ds = Dataset(rng.normal(size=(n, dim)), rng.integers(0, classes, size=n), classes)
    return ds, build_graph(ds, k)


def test_probs_uniform_at_zero_metric():
    ds, g = random_instance(0)
    np.testing.assert_allclose(neighbor_probs(ds, g, np.zeros((5, 5))), 0.25)


def test_probs_equidistant_pair():
    ds = Dataset(np.array([[0.0], [1.0], [-1.0]]), [0, 1, 0], 2)
    g = NeighborGraph(2, [[1, 2], [0, 2], [0, 1]])
    np.testing.assert_allclose(neighbor_probs(ds, g, np.eye(1))[0], [0.5, 0.5])


def test_probs_match_direct_formula():
    X = np.array([[0.0, 0.0], [1.0, 0.5], [0.2, 2.0], [-1.0, 1.0]])
    ds = Dataset(X, [0, 1, 0, 1], 2)
    g = build_graph(ds, 3)
    np.testing.assert_allclose(neighbor_probs(ds, g, np.eye(2)), nca_probs_loop(X, g.neighbor_ids, np.eye(2)), rtol=1e-13)


def test_probs_survive_huge_distances():
    ds, g = random_instance(1)
    p = neighbor_probs(ds, g, 1e6 * np.eye(5))
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p.sum(axis=1), 1.0)


def test_objective_zero_when_all_neighbours_agree():
    ds = two_triangles()
    assert nca_objective(ds, build_graph(ds, 2), np.eye(2)) == 0.0


def test_objective_floor():
    ds = Dataset(np.array([[0.0], [1.0], [1.5]]), [0, 1, 1], 2)
    g = build_graph(ds, 1)  # point 0's only neighbour has the other label
    obj = nca_objective(ds, g, np.eye(1))
    assert np.isfinite(obj)
    assert obj == pytest.approx(math.log(EPS_FLOOR))


def test_objective_matches_direct_formula():
    X = np.array([[0.0, 0.0], [0.3, 0.1], [1.0, 1.0], [1.2, 0.8], [0.1, 0.9], [0.9, 0.2]])
    y = np.array([0, 0, 1, 1, 0, 1])
    ds = Dataset(X, y, 2)
    g = build_graph(ds, 3)
    assert nca_objective(ds, g, np.eye(2)) == pytest.approx(nca_objective_loop(X, y, g.neighbor_ids, np.eye(2)), rel=1e-12)


def test_gradient_zero_for_perfect_points():
    ds = two_triangles()
    g = build_graph(ds, 2)
    assert np.abs(nca_gradient(ds, g, np.eye(2))).max() < 1e-12
    assert np.abs(metric_gradient(ds, g, np.eye(2))).max() < 1e-12


def test_gradient_zero_prefactor():
    ds, g = random_instance(2)
    assert np.all(nca_gradient(ds, g, np.zeros((5, 5))) == 0)


def _max_rel_err(analytic, numeric):
    return np.abs(analytic - numeric).max() / max(np.abs(numeric).max(), 1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_transform_gradient_matches_finite_differences(seed):
    ds, g = random_instance(seed)
    rng = np.random.default_rng(100 + seed)
    P = rng.normal(scale=0.05, size=(5, 5))
    L = np.eye(5) + 0.5 * (P + P.T)
    numeric = central_difference(lambda M: nca_objective(ds, g, M.T @ M), L)
    assert _max_rel_err(nca_gradient(ds, g, L), numeric) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_metric_gradient_matches_finite_differences(seed):
    ds, g = random_instance(seed)
    rng = np.random.default_rng(200 + seed)
    P = rng.normal(scale=0.05, size=(5, 5))
    A = np.eye(5) + 0.5 * (P + P.T)
    numeric = central_difference(lambda M: nca_objective(ds, g, M), A)
    assert _max_rel_err(metric_gradient(ds, g, A), numeric) < 1e-4


def test_gradient_is_total_minus_intraclass_scatter():
    ds, g = random_instance(7)
    c_e, c_i = scatter_terms(ds, g, np.eye(5))
    np.testing.assert_allclose(nca_gradient(ds, g, np.eye(5)), 2 * (c_e - c_i), atol=1e-12)
    np.testing.assert_allclose(c_e, c_e.T, atol=1e-12)


def test_metric_validation():
    with pytest.raises(ValueError):
        MahalanobisMetric(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        MahalanobisMetric(-np.eye(2))
    m = MahalanobisMetric(np.diag([2.0, 0.0]))
    assert MahalanobisMetric.from_dict(m.to_dict()).a.tolist() == m.a.tolist()


def test_train_returns_stationary_init():
    ds = two_triangles()
    g = build_graph(ds, 2)
    metric, trace = train_nca(ds, g, MahalanobisMetric.identity(2), max_iters=20)
    assert trace.iterations == 0 and trace.converged
    np.testing.assert_array_equal(metric.a, np.eye(2))


def test_train_ascends_and_is_deterministic():
    ds = make_blobs(2, 20, 2, 1.5, seed=3, separation=1.5)
    g = build_graph(ds, 8)
    init = MahalanobisMetric.identity(2)
    m1, t1 = train_nca(ds, g, init, max_iters=30)
    m2, t2 = train_nca(ds, g, init, max_iters=30)
    assert nca_objective(ds, g, m1) >= nca_objective(ds, g, init)
    assert t1.iterations > 0
    assert t1.objectives == t2.objectives
    assert np.array_equal(m1.a, m2.a)
    assert np.all(np.diff(t1.objectives) > 0)
    for a in t1.metrics:
        assert np.linalg.eigvalsh(a).min() > -1e-10


def test_project_psd():
    a = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3, -1
    p = project_psd(a)
    np.testing.assert_allclose(np.linalg.eigvalsh(p), [0.0, 3.0], atol=1e-12)


def test_class_posterior_examples():
    train = Dataset(np.array([[0.0], [1.0], [2.0], [3.0]]), [0, 0, 1, 1], 3)
    probs = nca_class_posterior(np.array([0.5]), train, np.array([0, 1]), np.eye(1))
    np.testing.assert_allclose(probs, [1, 0, 0])
    probs = nca_class_posterior(np.array([0.5]), train, np.array([0, 1, 2, 3]), np.zeros((1, 1)))
    np.testing.assert_allclose(probs, [0.5, 0.5, 0.0])


def test_class_posterior_direct_formula():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(9, 2))
    y = np.array([0, 1, 2, 0, 1, 2, 0, 1, 2])
    train = Dataset(X, y, 3)
    q = np.array([0.1, -0.2])
    ids = np.array([0, 4, 5, 7, 8])
    A = np.array([[2.0, 0.3], [0.3, 0.5]])
    e = {j: math.exp(-float((q - X[j]) @ A @ (q - X[j]))) for j in ids}
    z = sum(e.values())
    expect = [sum(e[j] for j in ids if y[j] == k) / z for k in range(3)]
    np.testing.assert_allclose(nca_class_posterior(q, train, ids, A), expect, rtol=1e-12)


@settings(deadline=None, max_examples=30)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 5.0))
def test_properties(seed, scale):
    ds, g = random_instance(seed, n=12, dim=3, k=3)
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(3, 3))
    A = scale * B @ B.T
    p = neighbor_probs(ds, g, A)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-10)
    assert nca_objective(ds, g, A) <= 0.0
    G = metric_gradient(ds, g, A)
    np.testing.assert_allclose(G, G.T, atol=1e-10)
    post = nca_class_posterior(rng.normal(size=3), ds, g.neighbor_ids[0], A)
    assert np.all(post >= 0) and abs(post.sum() - 1.0) < 1e-10
