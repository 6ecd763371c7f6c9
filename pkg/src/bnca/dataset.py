"""Labeled datasets: CSV I/O, synthetic blobs, per-class subsampling and label noise."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    """Raised for malformed input data or invalid sampling requests."""


@dataclass(frozen=True)
class Dataset:
    points: np.ndarray
    labels: np.ndarray
    class_count: int = field(default=-1)
    label_names: tuple | None = None  # original label value for each class index, when loaded from file

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        labels = np.asarray(self.labels)
        if points.ndim != 2 or points.shape[0] < 1 or points.shape[1] < 1:
            raise DatasetError(f"points must be a non-empty N x D matrix, got {points.shape}")
        if labels.shape != (points.shape[0],):
            raise DatasetError("labels must have one entry per point")
        if not np.all(np.isfinite(points)):
            raise DatasetError("points contain non-finite values")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise DatasetError("labels must be integers")
        labels = labels.astype(np.int64)
        count = self.class_count if self.class_count >= 0 else int(labels.max()) + 1
        if labels.min() < 0 or labels.max() >= count:
            raise DatasetError(f"labels must lie in [0, {count})")
        points.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_count", int(count))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.points[idx], self.labels[idx], self.class_count, self.label_names)

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.points, labels, self.class_count, self.label_names)


def _relabel(raw: list[int]) -> tuple[np.ndarray, tuple]:
    mapping: dict[int, int] = {}
    out = np.empty(len(raw), dtype=np.int64)
    for i, lab in enumerate(raw):
        out[i] = mapping.setdefault(lab, len(mapping))
    return out, tuple(mapping)


def load_csv(path, has_header: bool = False) -> Dataset:
    """Read a CSV whose last column is an integer label.

    Labels are remapped to contiguous ``0..C-1`` in order of first appearance.
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    if has_header and rows:
        rows = rows[1:]
    if not rows:
        raise DatasetError(f"{path} holds no data rows")
    width = len(rows[0])
    if width < 2:
        raise DatasetError("need at least one feature column and a label column")
    feats, raw_labels = [], []
    for lineno, row in enumerate(rows, start=1):
        if len(row) != width:
            raise DatasetError(f"row {lineno} has {len(row)} columns, expected {width}")
        try:
            feats.append([float(c) for c in row[:-1]])
        except ValueError as exc:
            raise DatasetError(f"row {lineno}: non-numeric feature ({exc})") from exc
        try:
            raw_labels.append(int(row[-1].strip()))
        except ValueError as exc:
            raise DatasetError(f"row {lineno}: label {row[-1]!r} is not an integer") from exc
    labels, names = _relabel(raw_labels)
    return Dataset(np.array(feats, dtype=float), labels, len(names), names)


def save_csv(ds: Dataset, path, header: bool = False) -> None:
    # repr(float) is the shortest round-tripping form, so reloads are bit-exact
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header:
            writer.writerow([f"x{k}" for k in range(ds.dim)] + ["label"])
        names = ds.label_names
        for x, y in zip(ds.points, ds.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y if names is None else names[y])])


def make_blobs(
    class_count: int,
    per_class: int,
    dim: int,
    spread: float,
    seed: int = 0,
    *,
    separation: float = 4.0,
    informative: int | None = None,
    nuisance_scale: float = 0.0,
) -> Dataset:
    """Gaussian clusters, one per class.

    Class means are drawn once from ``N(0, separation^2)`` on the first
    ``informative`` coordinates (all of them by default); remaining
    coordinates carry zero class signal. ``nuisance_scale`` adds extra
    class-independent variance on those coordinates, which makes raw
    Euclidean / PCA neighbourhoods misleading.
    """
    if class_count < 2 or per_class < 1 or dim < 1:
        raise DatasetError("need class_count >= 2, per_class >= 1, dim >= 1")
    if not spread > 0:
        raise DatasetError("spread must be positive")
    informative = dim if informative is None else informative
    if not 1 <= informative <= dim:
        raise DatasetError("informative must lie in [1, dim]")
    rng = np.random.default_rng(seed)
    means = np.zeros((class_count, dim))
    means[:, :informative] = rng.normal(0.0, separation, size=(class_count, informative))
    labels = np.repeat(np.arange(class_count), per_class)
    points = means[labels] + rng.normal(0.0, spread, size=(labels.size, dim))
    if nuisance_scale > 0 and informative < dim:
        points[:, informative:] += rng.normal(0.0, nuisance_scale, size=(labels.size, dim - informative))
    return Dataset(points, labels, class_count)


def subsample_per_class(ds: Dataset, per_class: int, seed: int = 0) -> Dataset:
    if per_class < 1:
        raise DatasetError("per_class must be >= 1")
    sizes = ds.class_sizes()
    if np.any(sizes < per_class):
        short = int(np.argmin(sizes))
        raise DatasetError(f"class {short} has {sizes[short]} members, need {per_class}")
    rng = np.random.default_rng(seed)
    picked = []
    for k in range(ds.class_count):
        members = np.flatnonzero(ds.labels == k)
        picked.append(rng.choice(members, size=per_class, replace=False))
    return ds.take(np.concatenate(picked))


def split_per_class(ds: Dataset, train_per_class: int, test_per_class: int, seed: int = 0):
    """Disjoint per-class train/test draws. Returns ``(train, test)``."""
    if train_per_class < 1 or test_per_class < 0:
        raise DatasetError("invalid split sizes")
    need = train_per_class + test_per_class
    sizes = ds.class_sizes()
    if np.any(sizes < need):
        raise DatasetError(f"every class needs {need} members for this split")
    rng = np.random.default_rng(seed)
    tr, te = [], []
    for k in range(ds.class_count):
        members = rng.permutation(np.flatnonzero(ds.labels == k))
        tr.append(members[:train_per_class])
        te.append(members[train_per_class:need])
    return ds.take(np.concatenate(tr)), ds.take(np.concatenate(te))


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass(frozen=True)
class NoiseSpec:
    level: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.level <= 1.0:
            raise DatasetError(f"noise level must lie in [0, 1], got {self.level}")


def inject_label_noise(ds: Dataset, spec: NoiseSpec) -> Dataset:
    """Flip exactly ``round(level * N)`` labels, each to a different random class."""
    if ds.class_count < 2:
        raise DatasetError("label noise needs at least two classes")
    n_flip = round_half_up(spec.level * ds.n)
    rng = np.random.default_rng(spec.seed)
    idx = rng.choice(ds.n, size=n_flip, replace=False)
    labels = ds.labels.copy()
    # offset in [1, C-1] guarantees a different class, uniform over the others
    offsets = rng.integers(1, ds.class_count, size=n_flip)
    labels[idx] = (labels[idx] + offsets) % ds.class_count
    return ds.with_labels(labels)
