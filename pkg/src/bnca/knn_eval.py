"""KNN classification under a learned metric, scoring, and significance tests."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .dataset import Dataset
from .nca import MahalanobisMetric
from .posterior import MapMetric

DEFAULT_TAU = 0.01


def _embed(X: np.ndarray, metric) -> tuple[np.ndarray, np.ndarray | None]:
    """Return (coordinates, metric matrix or None) so that distances are computable."""
    if metric is None:
        return X, None
    if isinstance(metric, MapMetric):
        return X @ metric.projection.T, None
    if isinstance(metric, MahalanobisMetric):
        return X, metric.a
    P = np.asarray(metric, dtype=float)
    return X @ P.T, None


def sq_distances(Q: np.ndarray, R: np.ndarray, metric=None) -> np.ndarray:
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.asarray(R, dtype=float)
    Qe, A = _embed(Q, metric)
    Re, _ = _embed(R, metric)
    diff = Qe[:, None, :] - Re[None, :, :]
    if A is None:
        return (diff**2).sum(-1)
    return np.einsum("qnd,de,qne->qn", diff, A, diff)


def _vote(labels: np.ndarray, dists: np.ndarray, class_count: int) -> int:
    counts = np.bincount(labels, minlength=class_count)
    summed = np.bincount(labels, weights=dists, minlength=class_count)
    top = np.flatnonzero(counts == counts.max())
    # lexsort: last key is primary; ties go to smaller summed distance, then lower index
    return int(top[np.lexsort((top, summed[top]))[0]])


def knn_predict(train: Dataset, queries: np.ndarray, k: int, metric=None) -> np.ndarray:
    if train.n == 0:
        raise ValueError("empty training set")
    if not 1 <= k <= train.n:
        raise ValueError(f"k={k} outside [1, {train.n}]")
    D = sq_distances(queries, train.points, metric)
    ids = np.argsort(D, axis=1, kind="stable")[:, :k]
    rows = np.arange(D.shape[0])[:, None]
    return np.array(
        [_vote(train.labels[i], d, train.class_count) for i, d in zip(ids, D[rows, ids])], dtype=np.int64
    )


def knn_predict_loo(train: Dataset, k: int, metric=None) -> np.ndarray:
    """Leave-one-out KNN labels for every training point."""
    if not 1 <= k <= train.n - 1:
        raise ValueError(f"k={k} outside [1, {train.n - 1}]")
    D = sq_distances(train.points, train.points, metric)
    np.fill_diagonal(D, np.inf)
    ids = np.argsort(D, axis=1, kind="stable")[:, :k]
    rows = np.arange(train.n)[:, None]
    return np.array(
        [_vote(train.labels[i], d, train.class_count) for i, d in zip(ids, D[rows, ids])], dtype=np.int64
    )


def knn_classify(train: Dataset, x_q: np.ndarray, k: int, metric=None) -> int:
    """Majority label among the ``k`` nearest training points to ``x_q``.

    ``metric`` may be None (Euclidean), a MahalanobisMetric, a MapMetric, or
    a projection matrix ``P`` (distances ``|P (x - y)|^2``).
    """
    return int(knn_predict(train, np.asarray(x_q, dtype=float)[None, :], k, metric)[0])


def accuracy(predictions, truths) -> float:
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    if predictions.shape != truths.shape:
        raise ValueError("predictions and truths differ in length")
    if predictions.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(predictions == truths))


def true_class_rank(probs: np.ndarray, truth: int) -> int:
    """1-based rank of ``truth`` when classes are sorted by probability, ties to lower index."""
    order = np.lexsort((np.arange(probs.size), -probs))
    return int(np.flatnonzero(order == truth)[0]) + 1


def modified_map(predictives, truths, tau: float = DEFAULT_TAU) -> float:
    """Mean over samples of ``1/rank(true class)``, counted only if its probability exceeds ``tau``."""
    if not 0.0 <= tau < 1.0:
        raise ValueError("tau must lie in [0, 1)")
    P = np.asarray(predictives, dtype=float)
    truths = np.asarray(truths, dtype=np.int64)
    if P.ndim != 2 or P.shape[0] != truths.size or truths.size == 0:
        raise ValueError("need one probability vector per truth")
    if np.any(P < -1e-12) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("rows must be probability distributions")
    total = 0.0
    for probs, y in zip(P, truths):
        if probs[y] > tau:
            total += 1.0 / true_class_rank(probs, int(y))
    return total / truths.size


@dataclass(frozen=True)
class PairedTest:
    p_value: float
    statistic: float
    degenerate: bool = False


def paired_one_tail_test(scores_a, scores_b) -> PairedTest:
    """Paired t-test of H1: mean(a) > mean(b); ``n - 1`` degrees of freedom."""
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("need two equal-length score vectors with n >= 2")
    diff = a - b
    n = diff.size
    mean = diff.mean()
    if np.all(diff == 0):
        return PairedTest(0.5, 0.0, degenerate=True)
    sd = diff.std(ddof=1)
    if sd == 0:
        t = np.inf if mean > 0 else -np.inf
    else:
        t = mean / (sd / np.sqrt(n))
    return PairedTest(float(stats.t.sf(t, df=n - 1)), float(t))


@dataclass
class EvalReport:
    per_seed_scores: list[float]
    mean: float
    std: float
    p_value_vs_baseline: float | None = None

    @classmethod
    def from_scores(cls, scores, p_value: float | None = None) -> "EvalReport":
        s = np.asarray(scores, dtype=float)
        return cls([float(v) for v in s], float(s.mean()), float(s.std()), p_value)

    def to_json(self) -> str:
        return json.dumps(asdict(self))
