import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bnca.dataset import Dataset
from bnca.eigenbasis import top_eigenvectors
from bnca.neighbors import build_graph, query_neighbors
from oracles import brute_force_neighbors


def _ds(X):
    X = np.asarray(X, dtype=float)
    return Dataset(X, np.arange(len(X)) % 2, 2)


def test_collinear_points():
    g = build_graph(_ds([[0.0], [1.0], [3.0]]), 1)
    assert g.neighbor_ids.tolist() == [[1], [0], [1]]


def test_complete_graph_limit():
    X = np.random.default_rng(0).normal(size=(6, 2))
    g = build_graph(_ds(X), 5)
    for i, row in enumerate(g.neighbor_ids):
        assert sorted(row) == [j for j in range(6) if j != i]


def test_matches_exhaustive_sort():
    X = np.random.default_rng(1).normal(size=(20, 3))
    g = build_graph(_ds(X), 5)
    np.testing.assert_array_equal(g.neighbor_ids, brute_force_neighbors(X, 5))


def test_ties_break_to_lower_index():
    X = np.array([[0.0], [1.0], [-1.0], [2.0]])
    g = build_graph(_ds(X), 2)
    assert g.neighbor_ids[0].tolist() == [1, 2]


@pytest.mark.parametrize("k", [0, 4])
def test_k_out_of_range(k):
    with pytest.raises(ValueError):
        build_graph(_ds(np.zeros((4, 1))), k)


def test_basis_projection_is_used():
    X = np.array([[0.0, 0.0], [1.0, 5.0], [2.0, 0.1], [3.0, 9.0]])
    basis_x = type(top_eigenvectors(X, 1))(np.array([[1.0], [0.0]]), np.ones(1))
    g = build_graph(_ds(X), 1, basis_x)
    assert g.neighbor_ids[0, 0] == 1  # only the first coordinate counts


def test_query_neighbors():
    train = _ds([[0.0], [1.0], [3.0]])
    ids = query_neighbors(train, np.array([[2.9], [0.4]]), 2)
    assert ids.tolist() == [[2, 1], [0, 1]]


@settings(deadline=None, max_examples=30)
@given(st.integers(0, 2**32 - 1), st.integers(5, 15), st.integers(1, 4))
def test_properties(seed, n, k):
    rng = np.random.default_rng(seed)
    X = rng.integers(-3, 4, size=(n, 3)).astype(float)  # coarse grid forces ties
    ds = _ds(X)
    g1, g2 = build_graph(ds, k), build_graph(ds, k)
    assert np.array_equal(g1.neighbor_ids, g2.neighbor_ids)
    assert g1.neighbor_ids.shape == (n, k)
    assert all(i not in row for i, row in enumerate(g1.neighbor_ids))
    np.testing.assert_array_equal(g1.neighbor_ids, brute_force_neighbors(X, k))
    perm = rng.permutation(3)
    g3 = build_graph(_ds(X[:, perm]), k)
    assert np.array_equal(g1.neighbor_ids, g3.neighbor_ids)
