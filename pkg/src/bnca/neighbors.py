"""Frozen K-nearest-neighbour graphs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .eigenbasis import EigenBasis

DEFAULT_K = 8


@dataclass(frozen=True)
class NeighborGraph:
    k: int
    neighbor_ids: np.ndarray  # N x K, nearest first

    def __post_init__(self):
        ids = np.array(self.neighbor_ids, dtype=np.int64)
        ids.setflags(write=False)
        object.__setattr__(self, "neighbor_ids", ids)

    @property
    def n(self) -> int:
        return self.neighbor_ids.shape[0]


def _sq_dists(Q: np.ndarray, R: np.ndarray) -> np.ndarray:
    # direct differences rather than the |a|^2 - 2ab + |b|^2 expansion: ties must be exact
    return ((Q[:, None, :] - R[None, :, :]) ** 2).sum(axis=-1)


def _k_smallest(dist: np.ndarray, k: int) -> np.ndarray:
    # stable sort on distance keeps lower index first among ties
    return np.argsort(dist, axis=1, kind="stable")[:, :k]


def build_graph(ds: Dataset, k: int = DEFAULT_K, basis: EigenBasis | None = None) -> NeighborGraph:
    """K nearest neighbours of every training point, excluding the point itself."""
    if not 1 <= k <= ds.n - 1:
        raise ValueError(f"K={k} outside [1, N-1] = [1, {ds.n - 1}]")
    X = ds.points if basis is None else basis.project(ds.points)
    dist = _sq_dists(X, X)
    np.fill_diagonal(dist, np.inf)
    return NeighborGraph(k, _k_smallest(dist, k))


def query_neighbors(
    train: Dataset, queries: np.ndarray, k: int = DEFAULT_K, basis: EigenBasis | None = None
) -> np.ndarray:
    """K nearest training points for each query row (queries are not in ``train``)."""
    if not 1 <= k <= train.n:
        raise ValueError(f"K={k} outside [1, {train.n}]")
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    R = train.points if basis is None else basis.project(train.points)
    Q = queries if basis is None else basis.project(queries)
    return _k_smallest(_sq_dists(Q, R), k)
