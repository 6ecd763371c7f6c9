"""Distance beliefs, the MAP metric, and Monte Carlo class prediction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bnca_core import GaussianBelief
from .dataset import Dataset
from .eigenbasis import EigenBasis, assemble_metric
from .nca import MahalanobisMetric, softmax_neg

DEFAULT_SAMPLES = 1000


@dataclass(frozen=True)
class DistanceBelief:
    mean: float
    variance: float


def distance_belief(posterior: GaussianBelief, w: np.ndarray) -> DistanceBelief:
    """Gaussian over ``gamma^T w``: mean ``w^T m_T``, variance ``w^T V_T w``."""
    w = np.asarray(w, dtype=float)
    if w.shape != (posterior.dim,):
        raise ValueError("pair feature length does not match the posterior")
    var = float(w @ posterior.cov @ w)
    return DistanceBelief(float(w @ posterior.mean), max(var, 0.0))


@dataclass(frozen=True)
class MapMetric:
    metric: MahalanobisMetric
    projection: np.ndarray  # d x D, rows sqrt(max(m_l, 0)) v_l^T
    clamped: int

    def transform(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.projection.T


def map_metric(posterior: GaussianBelief, basis: EigenBasis) -> MapMetric:
    """Metric at the posterior mean, with negative weights clamped to zero."""
    if posterior.dim != basis.dim_d:
        raise ValueError("posterior and basis dimensions differ")
    weights = np.clip(posterior.mean, 0.0, None)
    clamped = int(np.sum(posterior.mean < 0))
    proj = np.sqrt(weights)[:, None] * basis.vectors.T
    return MapMetric(MahalanobisMetric(assemble_metric(basis, weights)), proj, clamped)


def sample_gamma(posterior: GaussianBelief, count: int, seed: int = 0) -> np.ndarray:
    """``count`` i.i.d. draws from the posterior, shape ``count x d``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    cov = posterior.cov
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        chol = np.linalg.cholesky(cov + 1e-12 * np.eye(posterior.dim))
    z = np.random.default_rng(seed).standard_normal((count, posterior.dim))
    return posterior.mean + z @ chol.T


def _query_features(x_q, train: Dataset, neighbor_ids, basis: EigenBasis) -> np.ndarray:
    x_q = np.asarray(x_q, dtype=float)
    return (basis.project(x_q)[..., None, :] - basis.project(train.points)[neighbor_ids]) ** 2


def class_posterior_gamma(
    x_q, train: Dataset, neighbor_ids, basis: EigenBasis, gamma: np.ndarray
) -> np.ndarray:
    """Class probabilities for one query at fixed ``gamma`` (plug-in when gamma = m_T)."""
    w = _query_features(x_q, train, neighbor_ids, basis)
    p = softmax_neg(w @ np.asarray(gamma, dtype=float))
    probs = np.bincount(train.labels[neighbor_ids], weights=p, minlength=train.class_count)
    return probs / probs.sum()


def predictive_mcmc(
    x_q,
    train: Dataset,
    neighbor_ids,
    basis: EigenBasis,
    posterior: GaussianBelief,
    T: int = DEFAULT_SAMPLES,
    seed: int = 0,
    gammas: np.ndarray | None = None,
) -> np.ndarray:
    """Average of per-sample neighbour class posteriors over ``T`` posterior draws."""
    if gammas is None:
        gammas = sample_gamma(posterior, T, seed)
    neighbor_ids = np.asarray(neighbor_ids)
    w = _query_features(x_q, train, neighbor_ids, basis)  # K x d
    p = softmax_neg(gammas @ w.T)  # T x K
    onehot = np.eye(train.class_count)[train.labels[neighbor_ids]]  # K x C
    probs = (p @ onehot).mean(axis=0)
    return probs / probs.sum()


def predictive_mcmc_batch(
    queries: np.ndarray,
    train: Dataset,
    neighbor_ids: np.ndarray,
    basis: EigenBasis,
    posterior: GaussianBelief,
    T: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> np.ndarray:
    """Row-wise ``predictive_mcmc`` sharing one set of posterior draws."""
    gammas = sample_gamma(posterior, T, seed)
    return np.stack(
        [predictive_mcmc(q, train, ids, basis, posterior, gammas=gammas) for q, ids in zip(queries, neighbor_ids)]
    )
