"""Point-estimate NCA on a frozen K-neighbour graph.

The metric ``A`` is a full symmetric PSD matrix. Training is projected
gradient ascent on the log-likelihood of same-label neighbour selection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .neighbors import NeighborGraph

EPS_FLOOR = 1e-12


@dataclass(frozen=True)
class MahalanobisMetric:
    a: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("metric must be a square matrix")
        if np.max(np.abs(a - a.T), initial=0.0) >= 1e-10:
            raise ValueError("metric must be symmetric")
        if a.size and np.linalg.eigvalsh(a).min() < -1e-8:
            raise ValueError("metric must be positive semidefinite")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)

    @classmethod
    def identity(cls, dim: int) -> "MahalanobisMetric":
        return cls(np.eye(dim))

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def sq_dist(self, diffs: np.ndarray) -> np.ndarray:
        return np.einsum("...d,de,...e->...", diffs, self.a, diffs)

    def to_dict(self) -> dict:
        return {"D": self.dim, "a": self.a.ravel().tolist()}

    @classmethod
    def from_dict(cls, blob: dict) -> "MahalanobisMetric":
        return cls(np.asarray(blob["a"], dtype=float).reshape(blob["D"], blob["D"]))


def _as_matrix(metric) -> np.ndarray:
    return metric.a if isinstance(metric, MahalanobisMetric) else np.asarray(metric, dtype=float)


def neighbor_diffs(ds: Dataset, graph: NeighborGraph) -> np.ndarray:
    """``x_i - x_j`` for every j in N_i, shape N x K x D."""
    return ds.points[:, None, :] - ds.points[graph.neighbor_ids]


def same_label_mask(ds: Dataset, graph: NeighborGraph) -> np.ndarray:
    return ds.labels[graph.neighbor_ids] == ds.labels[:, None]


def softmax_neg(d2: np.ndarray) -> np.ndarray:
    """Row-wise ``exp(-d2) / sum exp(-d2)`` with a max shift."""
    if not np.all(np.isfinite(d2)):
        raise FloatingPointError("non-finite neighbour distances")
    z = -d2
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def neighbor_probs(ds: Dataset, graph: NeighborGraph, metric) -> np.ndarray:
    """N x K matrix of ``p_ij`` over each point's neighbour list."""
    A = _as_matrix(metric)
    diffs = neighbor_diffs(ds, graph)
    return softmax_neg(np.einsum("nkd,de,nke->nk", diffs, A, diffs))


def nca_objective(ds: Dataset, graph: NeighborGraph, metric) -> float:
    """``sum_i log(sum_{j in N_i, y_j = y_i} p_ij)``, each inner sum floored at 1e-12."""
    p = neighbor_probs(ds, graph, metric)
    mass = np.where(same_label_mask(ds, graph), p, 0.0).sum(axis=1)
    return float(np.log(np.maximum(mass, EPS_FLOOR)).sum())


def scatter_terms(ds: Dataset, graph: NeighborGraph, metric) -> tuple[np.ndarray, np.ndarray]:
    """Total (C_E) and intra-class (C_I) neighbour scatter under ``metric``.

    Points whose same-label mass is at or below the log floor are left out of
    both terms: the floored objective is flat there.
    """
    A = _as_matrix(metric)
    diffs = neighbor_diffs(ds, graph)
    p = softmax_neg(np.einsum("nkd,de,nke->nk", diffs, A, diffs))
    yp = np.where(same_label_mask(ds, graph), p, 0.0)
    mass = yp.sum(axis=1)
    active = mass > EPS_FLOOR
    q = np.zeros_like(yp)
    q[active] = yp[active] / mass[active, None]
    pe = np.where(active[:, None], p, 0.0)
    c_e = np.einsum("nk,nkd,nke->de", pe, diffs, diffs)
    c_i = np.einsum("nk,nkd,nke->de", q, diffs, diffs)
    return c_e, c_i


def nca_gradient(ds: Dataset, graph: NeighborGraph, transform) -> np.ndarray:
    """Gradient ``2 L (C_E - C_I)`` of the objective w.r.t. a linear map ``L``.

    Distances are ``|L (x_i - x_j)|^2``, i.e. the metric is ``L^T L``; the
    scatter terms are evaluated under that metric.
    """
    L = _as_matrix(transform)
    c_e, c_i = scatter_terms(ds, graph, L.T @ L)
    return 2.0 * L @ (c_e - c_i)


def metric_gradient(ds: Dataset, graph: NeighborGraph, metric) -> np.ndarray:
    """Gradient ``C_E - C_I`` of the objective w.r.t. the metric entries directly."""
    c_e, c_i = scatter_terms(ds, graph, metric)
    g = c_e - c_i
    return 0.5 * (g + g.T)


def project_psd(a: np.ndarray) -> np.ndarray:
    a = 0.5 * (a + a.T)
    vals, vecs = np.linalg.eigh(a)
    a = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class Backtracking:
    """Armijo backtracking with a step size carried across iterations."""

    c: float = 1e-4
    shrink: float = 0.5
    grow: float = 2.0
    initial: float | None = None  # default: 1 / |grad_0|_F times |A_0|_F
    max_halvings: int = 40


@dataclass
class NCATrace:
    objectives: list[float] = field(default_factory=list)
    metrics: list[np.ndarray] = field(default_factory=list)
    steps: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.objectives) - 1


def train_nca(
    ds: Dataset,
    graph: NeighborGraph,
    init: MahalanobisMetric | None = None,
    max_iters: int = 100,
    step_rule: Backtracking | None = None,
    tol: float = 1e-9,
) -> tuple[MahalanobisMetric, NCATrace]:
    """Projected gradient ascent on the NCA log-likelihood.

    Every accepted step satisfies the Armijo condition after symmetrisation
    and PSD projection, so the recorded objectives are non-decreasing; the
    trace holds the iterate after every accepted step (entry 0 is ``init``).
    """
    rule = step_rule or Backtracking()
    A = (init.a if init is not None else np.eye(ds.dim)).copy()
    obj = nca_objective(ds, graph, A)
    trace = NCATrace([obj], [A.copy()], [])
    step = None
    for _ in range(max_iters):
        G = metric_gradient(ds, graph, A)
        gnorm = np.linalg.norm(G)
        if gnorm <= 1e-12 * max(1.0, abs(obj)):
            trace.converged = True
            break
        if step is None:
            step = rule.initial if rule.initial is not None else max(np.linalg.norm(A), 1.0) / gnorm
        accepted = False
        for _ in range(rule.max_halvings):
            cand = project_psd(A + step * G)
            with np.errstate(over="ignore", invalid="ignore"):
                try:
                    cand_obj = nca_objective(ds, graph, cand)
                except FloatingPointError:
                    cand_obj = -np.inf
            if np.isfinite(cand_obj) and cand_obj >= obj + rule.c * float(np.sum(G * (cand - A))) and cand_obj > obj:
                accepted = True
                break
            step *= rule.shrink
        if not accepted:
            trace.converged = True
            break
        gain = cand_obj - obj
        A, obj = cand, cand_obj
        trace.objectives.append(obj)
        trace.metrics.append(A.copy())
        trace.steps.append(step)
        step *= rule.grow
        if gain <= tol * max(1.0, abs(obj)):
            trace.converged = True
            break
    best = int(np.argmax(trace.objectives))
    return MahalanobisMetric(project_psd(trace.metrics[best])), trace


def nca_class_posterior(
    x_q: np.ndarray, train: Dataset, neighbor_ids: np.ndarray, metric
) -> np.ndarray:
    """``P(y = k | x_q) = sum_{j in N_q, y_j = k} p_qj`` over the query's neighbours."""
    A = _as_matrix(metric)
    diffs = np.asarray(x_q, dtype=float)[None, :] - train.points[neighbor_ids]
    p = softmax_neg(np.einsum("kd,de,ke->k", diffs, A, diffs))
    probs = np.bincount(train.labels[neighbor_ids], weights=p, minlength=train.class_count)
    return probs / probs.sum()
