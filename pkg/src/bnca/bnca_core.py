"""Variational Gaussian posterior over eigen-metric weights.

The NCA likelihood is lower-bounded pair by pair with -lse(eta), and -lse is
replaced by Bohning's fixed-curvature quadratic. The posterior covariance is
then independent of the variational parameters and is computed once; only
the mean is iterated.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .eigenbasis import EigenBasis, pair_features
from .neighbors import NeighborGraph

# incremented by bohning_H / posterior_covariance; lets callers prove one evaluation per fit
CALL_COUNTS: Counter = Counter()


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float)
        cov = np.array(self.cov, dtype=float)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError("mean must be length d and cov d x d")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-10 * max(1.0, np.abs(cov).max()):
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise ValueError("covariance must be positive definite")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def isotropic(cls, d: int, epsilon: float = 0.1, sigma: float = 0.001) -> "GaussianBelief":
        """Prior ``N(epsilon * 1, sigma * I)``."""
        return cls(np.full(d, float(epsilon)), sigma * np.eye(d))


@dataclass(frozen=True)
class PairDesign:
    """``W_i^j``: column t is ``w_ij - w_{i, N_i[t]}`` (d x K)."""

    owner_i: int
    owner_j: int
    w_matrix: np.ndarray


class DesignSet(Sequence):
    """All same-label pair designs, stored as one P x d x K array."""

    def __init__(self, owners: np.ndarray, w: np.ndarray, slots: np.ndarray | None = None):
        self.owners = np.asarray(owners, dtype=np.int64).reshape(-1, 2)
        self.w = np.asarray(w, dtype=float)
        if self.w.ndim != 3 or self.w.shape[0] != self.owners.shape[0]:
            raise ValueError("w must be P x d x K with one row of owners per design")
        # position of j inside N_i: its column of W is identically zero
        self.slots = None if slots is None else np.asarray(slots, dtype=np.int64)

    @classmethod
    def from_designs(cls, designs, d: int | None = None, k: int | None = None) -> "DesignSet":
        if isinstance(designs, DesignSet):
            return designs
        designs = list(designs)
        if not designs:
            return cls(np.zeros((0, 2)), np.zeros((0, d or 0, k or 0)))
        owners = [(p.owner_i, p.owner_j) for p in designs]
        return cls(owners, np.stack([np.asarray(p.w_matrix, dtype=float) for p in designs]))

    def __len__(self) -> int:
        return self.w.shape[0]

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return [self[i] for i in range(*idx.indices(len(self)))]
        i, j = self.owners[idx]
        return PairDesign(int(i), int(j), self.w[idx])

    @property
    def dim_d(self) -> int:
        return self.w.shape[1]

    @property
    def k(self) -> int:
        return self.w.shape[2]


def lse(eta: np.ndarray) -> np.ndarray:
    """``log(1 + sum_t exp(eta_t))`` over the last axis, max-shifted."""
    eta = np.asarray(eta, dtype=float)
    top = np.maximum(eta.max(axis=-1), 0.0)
    return top + np.log(np.exp(-top) + np.exp(eta - top[..., None]).sum(axis=-1))


def softmax_g(psi: np.ndarray) -> np.ndarray:
    """``exp(psi - lse(psi))``: softmax against an implicit zero logit."""
    psi = np.asarray(psi, dtype=float)
    return np.exp(psi - lse(psi)[..., None])


def bohning_H(k: int) -> np.ndarray:
    if k < 1:
        raise ValueError("K must be >= 1")
    CALL_COUNTS["bohning_H"] += 1
    return 0.5 * (np.eye(k) - np.ones((k, k)) / (k + 1))


def bohning_b(psi: np.ndarray, H: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    if psi.shape[-1] != H.shape[0]:
        raise ValueError("psi length does not match H")
    return psi @ H - softmax_g(psi)  # H is symmetric, so psi @ H == H psi row-wise


def bound_constant(psi: np.ndarray, H: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    return 0.5 * np.einsum("...k,kl,...l->...", psi, H, psi) - (softmax_g(psi) * psi).sum(-1) + lse(psi)


def bound_value(eta: np.ndarray, psi: np.ndarray, H: np.ndarray) -> np.ndarray:
    """Quadratic lower bound on ``-lse(eta)`` that touches it at ``eta = psi``."""
    eta = np.asarray(eta, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if eta.shape != psi.shape or eta.shape[-1] != H.shape[0]:
        raise ValueError("eta, psi and H dimensions disagree")
    b = bohning_b(psi, H)
    quad = np.einsum("...k,kl,...l->...", eta, H, eta)
    return -0.5 * quad + (b * eta).sum(-1) - bound_constant(psi, H)


def build_pair_designs(ds: Dataset, graph: NeighborGraph, basis: EigenBasis) -> DesignSet:
    """One design per ordered same-label pair ``(i, j in N_i)``."""
    w = pair_features(basis, ds.points, graph.neighbor_ids)  # N x K x d
    same = ds.labels[graph.neighbor_ids] == ds.labels[:, None]
    rows, slots = np.nonzero(same)
    owners = np.stack([rows, graph.neighbor_ids[rows, slots]], axis=1)
    # W[p][:, t] = w_{i, j} - w_{i, N_i[t]}
    W = w[rows, slots][:, :, None] - np.transpose(w[rows], (0, 2, 1))
    W[np.arange(len(rows)), :, slots] = 0.0
    return DesignSet(owners, W.reshape(len(rows), basis.dim_d, graph.k), slots)


def design_precision(designs, H: np.ndarray) -> np.ndarray:
    """``sum_p W_p H W_p^T``."""
    designs = DesignSet.from_designs(designs)
    return np.einsum("pdk,kl,pel->de", designs.w, H, designs.w)


def posterior_covariance(prior: GaussianBelief, designs, H: np.ndarray) -> np.ndarray:
    """``V_T = (V_0^{-1} + sum_p W_p H W_p^T)^{-1}``."""
    CALL_COUNTS["posterior_covariance"] += 1
    designs = DesignSet.from_designs(designs, prior.dim, H.shape[0])
    if len(designs) == 0:
        return prior.cov.copy()
    prec = np.linalg.inv(prior.cov) + design_precision(designs, H)
    prec = 0.5 * (prec + prec.T)
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("posterior precision is not positive definite") from exc
    inv_chol = np.linalg.solve(chol, np.eye(prior.dim))
    cov = inv_chol.T @ inv_chol
    return 0.5 * (cov + cov.T)


def posterior_mean(prior: GaussianBelief, cov_T: np.ndarray, designs, b_all: np.ndarray) -> np.ndarray:
    """``m_T = V_T (V_0^{-1} m_0 + sum_p W_p b_p)``."""
    designs = DesignSet.from_designs(designs, prior.dim)
    b_all = np.asarray(b_all, dtype=float)
    if len(designs) == 0:
        return prior.mean.copy()
    if b_all.shape != (len(designs), designs.k):
        raise ValueError("need one length-K b vector per design")
    rhs = np.linalg.solve(prior.cov, prior.mean) + np.einsum("pdk,pk->d", designs.w, b_all)
    return cov_T @ rhs


def update_psi(design, m_T: np.ndarray) -> np.ndarray:
    """``psi = W^T m_T`` for one design (d x K) or a stack (P x d x K)."""
    W = design.w if isinstance(design, DesignSet) else getattr(design, "w_matrix", design)
    W = np.asarray(W, dtype=float)
    m_T = np.asarray(m_T, dtype=float)
    if W.shape[-2] != m_T.size:
        raise ValueError("design rows do not match m_T")
    return np.einsum("...dk,d->...k", W, m_T)


@dataclass
class VariationalState:
    H: np.ndarray
    psi: np.ndarray
    b: np.ndarray


@dataclass
class FitTrace:
    deltas: list[float] = field(default_factory=list)
    bounds: list[float] = field(default_factory=list)
    means: list[np.ndarray] = field(default_factory=list)
    converged: bool = False
    h_evaluations: int = 0
    cov_evaluations: int = 0

    @property
    def iterations(self) -> int:
        return len(self.deltas)


@dataclass
class BNCAFit:
    posterior: GaussianBelief
    trace: FitTrace
    state: VariationalState
    designs: DesignSet

    def to_dict(self) -> dict:
        return {
            "d": self.posterior.dim,
            "mean": self.posterior.mean.tolist(),
            "cov": self.posterior.cov.ravel().tolist(),
            "iterations": self.trace.iterations,
            "converged": self.trace.converged,
            "deltas": list(self.trace.deltas),
            "bounds": list(self.trace.bounds),
        }


def posterior_from_dict(blob: dict) -> GaussianBelief:
    d = blob["d"]
    return GaussianBelief(np.asarray(blob["mean"]), np.asarray(blob["cov"]).reshape(d, d))


def surrogate_total(designs: DesignSet, m: np.ndarray, psi: np.ndarray, H: np.ndarray) -> float:
    if len(designs) == 0:
        return 0.0
    return float(bound_value(update_psi(designs, m), psi, H).sum())


def fit_bnca(
    ds: Dataset,
    graph: NeighborGraph,
    basis: EigenBasis,
    prior: GaussianBelief | None = None,
    max_iters: int = 50,
    tol: float = 1e-6,
) -> BNCAFit:
    """Fixed-curvature variational fit of ``N(gamma | m_T, V_T)``.

    H and V_T are evaluated once up front; each sweep refreshes psi and b at
    the current mean and recomputes the mean in closed form. Stops when the
    mean moves by less than ``tol`` in max-norm; otherwise returns the last
    iterate with ``trace.converged`` False.
    """
    prior = prior or GaussianBelief.isotropic(basis.dim_d)
    if prior.dim != basis.dim_d:
        raise ValueError("prior dimension does not match the basis")
    before = CALL_COUNTS.copy()
    H = bohning_H(graph.k)
    designs = build_pair_designs(ds, graph, basis)
    cov_T = posterior_covariance(prior, designs, H)
    trace = FitTrace()
    m = prior.mean.copy()
    psi = update_psi(designs, m)
    b = bohning_b(psi, H) if len(designs) else np.zeros((0, graph.k))
    if len(designs) == 0:
        trace.deltas.append(0.0)
        trace.bounds.append(0.0)
        trace.means.append(m.copy())
        trace.converged = True
    for _ in range(max_iters if len(designs) else 0):
        psi = update_psi(designs, m)
        b = bohning_b(psi, H)
        m_new = posterior_mean(prior, cov_T, designs, b)
        delta = float(np.max(np.abs(m_new - m)))
        m = m_new
        trace.deltas.append(delta)
        trace.bounds.append(surrogate_total(designs, m, psi, H))
        trace.means.append(m.copy())
        if delta < tol:
            trace.converged = True
            break
    after = CALL_COUNTS
    trace.h_evaluations = after["bohning_H"] - before["bohning_H"]
    trace.cov_evaluations = after["posterior_covariance"] - before["posterior_covariance"]
    posterior = prior if len(designs) == 0 else GaussianBelief(m, cov_T)
    return BNCAFit(posterior, trace, VariationalState(H, psi, b), designs)
