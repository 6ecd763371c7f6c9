"""Eigen approximation of a Mahalanobis matrix over the data scatter."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EigenBasis:
    """Top-``d`` eigenvectors (columns of ``vectors``, shape D x d) of the scatter."""

    vectors: np.ndarray
    values: np.ndarray
    center: np.ndarray | None = None

    def __post_init__(self):
        vecs = np.array(self.vectors, dtype=float)
        vals = np.array(self.values, dtype=float)
        if vecs.ndim != 2 or vals.shape != (vecs.shape[1],):
            raise ValueError("vectors must be D x d and values length d")
        vecs.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "vectors", vecs)
        object.__setattr__(self, "values", vals)
        if self.center is not None:
            c = np.array(self.center, dtype=float)
            c.setflags(write=False)
            object.__setattr__(self, "center", c)

    @property
    def dim_d(self) -> int:
        return self.vectors.shape[1]

    @property
    def ambient_dim(self) -> int:
        return self.vectors.shape[0]

    def project(self, x: np.ndarray) -> np.ndarray:
        """Coordinates ``v_l^T x`` for a point or a stack of points.

        The centre is irrelevant to differences of points, so it is not
        subtracted here; it only affects which directions were chosen.
        """
        return np.asarray(x, dtype=float) @ self.vectors

    def to_dict(self) -> dict:
        return {
            "d": self.dim_d,
            "D": self.ambient_dim,
            "vectors": self.vectors.ravel().tolist(),
            "values": self.values.tolist(),
            "center": None if self.center is None else self.center.tolist(),
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "EigenBasis":
        vecs = np.asarray(blob["vectors"], dtype=float).reshape(blob["D"], blob["d"])
        center = blob.get("center")
        return cls(vecs, np.asarray(blob["values"], dtype=float), None if center is None else np.asarray(center))

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "EigenBasis":
        return cls.from_dict(json.loads(text))


def scatter_matrix(X: np.ndarray, center: bool = False) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if center:
        X = X - X.mean(axis=0)
    S = X.T @ X
    return 0.5 * (S + S.T)


def top_eigenvectors(X: np.ndarray, d: int, center: bool = False) -> EigenBasis:
    """Top-``d`` eigenpairs of the D x D scatter ``sum_i x_i x_i^T``.

    With ``center=True`` the scatter is taken about the mean (PCA).
    Each eigenvector is signed so that its largest-magnitude entry is positive.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be an N x D matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    n, D = X.shape
    if not 1 <= d <= min(n, D):
        raise ValueError(f"d={d} outside [1, min(N, D)] = [1, {min(n, D)}]")
    S = scatter_matrix(X, center=center)
    vals, vecs = np.linalg.eigh(S)
    order = np.argsort(vals)[::-1][:d]
    vals, vecs = vals[order], vecs[:, order]
    pivots = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivots, np.arange(d)])
    signs[signs == 0] = 1.0
    vecs = vecs * signs
    # tiny negative eigenvalues are rounding noise on a PSD matrix
    vals = np.where(vals < 0, np.maximum(vals, -1e-12 * max(abs(vals[0]), 1.0)), vals)
    return EigenBasis(vecs, vals, X.mean(axis=0) if center else None)


def pair_feature(basis: EigenBasis, x_i: np.ndarray, x_j: np.ndarray) -> np.ndarray:
    """``w[l] = (v_l^T (x_i - x_j))^2``."""
    x_i = np.asarray(x_i, dtype=float)
    x_j = np.asarray(x_j, dtype=float)
    if x_i.shape[-1] != basis.ambient_dim or x_j.shape[-1] != basis.ambient_dim:
        raise ValueError("point dimension does not match the basis")
    return ((x_i - x_j) @ basis.vectors) ** 2


def pair_features(basis: EigenBasis, X: np.ndarray, neighbor_ids: np.ndarray) -> np.ndarray:
    """Features for every (i, N_i[t]): array of shape N x K x d."""
    proj = basis.project(X)
    return (proj[:, None, :] - proj[neighbor_ids]) ** 2


def gamma_distance(gamma: np.ndarray, w: np.ndarray) -> float:
    gamma = np.asarray(gamma, dtype=float)
    w = np.asarray(w, dtype=float)
    if gamma.shape[-1] != w.shape[-1]:
        raise ValueError("gamma and w lengths differ")
    return w @ gamma


def assemble_metric(basis: EigenBasis, gamma: np.ndarray) -> np.ndarray:
    """``A = sum_l gamma_l v_l v_l^T``."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (basis.dim_d,):
        raise ValueError("gamma length does not match the basis")
    V = basis.vectors
    A = (V * gamma) @ V.T
    return 0.5 * (A + A.T)
