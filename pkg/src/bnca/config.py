"""Experiment configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

METHODS = ("pca", "nca", "bnca")


class ConfigError(ValueError):
    pass


@dataclass
class BlobsSpec:
    class_count: int = 3
    pool_per_class: int = 200
    dim: int = 20
    spread: float = 1.0
    separation: float = 3.0
    informative: int | None = 3
    nuisance_scale: float = 0.0


@dataclass
class ExperimentConfig:
    csv_path: str | None = None
    has_header: bool = False
    blobs: BlobsSpec = field(default_factory=BlobsSpec)
    standardize: bool = False

    d: int = 5
    K: int = 8
    knn_k: int = 5
    epsilon: float = 0.1
    sigma: float = 0.001
    max_iters: int = 50
    tol: float = 1e-6
    nca_max_iters: int = 100

    noise_levels: list[float] = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3])
    per_class_sizes: list[int] = field(default_factory=lambda: [30])
    test_per_class: int | None = 100
    repeats: int = 10
    master_seed: int = 0
    tau: float = 0.01
    mcmc_T: int = 1000
    difficult_fraction: float = 0.3
    trace_repeats: int = 1
    methods: list[str] = field(default_factory=lambda: list(METHODS))

    def validate(self) -> "ExperimentConfig":
        checks = [
            (self.d >= 1, "d must be >= 1"),
            (self.K >= 1, "K must be >= 1"),
            (self.knn_k >= 1, "knn_k must be >= 1"),
            (self.sigma > 0, "sigma must be positive"),
            (self.max_iters >= 1 and self.nca_max_iters >= 0, "iteration limits must be positive"),
            (self.tol > 0, "tol must be positive"),
            (all(0.0 <= v <= 1.0 for v in self.noise_levels) and self.noise_levels, "noise levels must lie in [0, 1]"),
            (all(int(m) >= 1 for m in self.per_class_sizes) and self.per_class_sizes, "per_class_sizes must be >= 1"),
            (self.test_per_class is None or self.test_per_class >= 1, "test_per_class must be >= 1"),
            (self.repeats >= 1, "repeats must be >= 1"),
            (self.master_seed >= 0, "master_seed must be non-negative"),
            (0.0 <= self.tau < 1.0, "tau must lie in [0, 1)"),
            (self.mcmc_T >= 1, "mcmc_T must be >= 1"),
            (0.0 < self.difficult_fraction <= 1.0, "difficult_fraction must lie in (0, 1]"),
            (self.trace_repeats >= 0, "trace_repeats must be >= 0"),
            (self.methods and set(self.methods) <= set(METHODS), f"methods must be a subset of {METHODS}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        raw = dict(raw)
        if "blobs" in raw:
            blob_raw = raw["blobs"] or {}
            bad = set(blob_raw) - {f.name for f in fields(BlobsSpec)}
            if bad:
                raise ConfigError(f"unknown blobs keys: {sorted(bad)}")
            raw["blobs"] = BlobsSpec(**blob_raw)
        try:
            return cls(**raw).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(raw)
