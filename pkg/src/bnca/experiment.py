"""Repeated-trial experiment runner and report writers.

Every random draw is seeded from a hash of ``(master_seed, purpose, ...)``,
so a method's scores never depend on which other methods ran or in what order.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bnca_core import GaussianBelief, fit_bnca, surrogate_total, update_psi
from .config import ExperimentConfig
from .dataset import Dataset, NoiseSpec, inject_label_noise, load_csv, make_blobs, split_per_class
from .eigenbasis import top_eigenvectors
from .knn_eval import EvalReport, accuracy, knn_predict, knn_predict_loo, modified_map, paired_one_tail_test
from .nca import MahalanobisMetric, nca_class_posterior, train_nca
from .neighbors import build_graph, query_neighbors
from .posterior import class_posterior_gamma, map_metric, predictive_mcmc_batch

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("iter", "objective", "train_acc", "test_acc")


def child_seed(*parts) -> int:
    """Deterministic 63-bit seed from an arbitrary tuple of JSON-able parts."""
    digest = hashlib.sha256(json.dumps(parts, separators=(",", ":")).encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass(frozen=True)
class Condition:
    per_class: int
    noise: float

    @property
    def label(self) -> str:
        return f"per_class={self.per_class} noise={self.noise:.2f}"

    @property
    def key(self) -> list:
        return [self.per_class, round(self.noise, 6)]


def conditions(cfg: ExperimentConfig, sweep: str = "grid") -> list[Condition]:
    if sweep == "noise":
        return [Condition(int(cfg.per_class_sizes[0]), float(v)) for v in cfg.noise_levels]
    if sweep == "size":
        return [Condition(int(m), float(cfg.noise_levels[0])) for m in cfg.per_class_sizes]
    if sweep == "grid":
        return [Condition(int(m), float(v)) for m in cfg.per_class_sizes for v in cfg.noise_levels]
    raise ValueError(f"unknown sweep {sweep!r}")


def load_pool(cfg: ExperimentConfig) -> Dataset:
    if cfg.csv_path:
        return load_csv(cfg.csv_path, has_header=cfg.has_header)
    b = cfg.blobs
    return make_blobs(
        b.class_count,
        b.pool_per_class,
        b.dim,
        b.spread,
        seed=child_seed(cfg.master_seed, "pool"),
        separation=b.separation,
        informative=b.informative,
        nuisance_scale=b.nuisance_scale,
    )


def _standardize(train: Dataset, test: Dataset) -> tuple[Dataset, Dataset]:
    mu = train.points.mean(axis=0)
    sd = train.points.std(axis=0)
    sd[sd == 0] = 1.0
    return (
        Dataset((train.points - mu) / sd, train.labels, train.class_count),
        Dataset((test.points - mu) / sd, test.labels, test.class_count),
    )


@dataclass
class Trial:
    """One train/test draw for a (condition, repeat) pair, shared by all methods."""

    train: Dataset
    test: Dataset
    query_ids: np.ndarray
    difficult: np.ndarray


def make_trial(pool: Dataset, cfg: ExperimentConfig, cond: Condition, repeat: int) -> Trial:
    sizes = pool.class_sizes()
    test_pc = cfg.test_per_class
    if test_pc is None or test_pc > int(sizes.min()) - cond.per_class:
        test_pc = int(sizes.min()) - cond.per_class
    train, test = split_per_class(pool, cond.per_class, test_pc, seed=child_seed(cfg.master_seed, "split", cond.key, repeat))
    train = inject_label_noise(train, NoiseSpec(cond.noise, child_seed(cfg.master_seed, "noise", cond.key, repeat)))
    if cfg.standardize:
        train, test = _standardize(train, test)
    k = min(cfg.K, train.n - 1)
    q_ids = query_neighbors(train, test.points, k)
    # difficulty reference: plug-in neighbour posterior at the prior mean, shared by all methods
    ref_basis = top_eigenvectors(train.points, min(cfg.d, train.n, train.dim))
    gamma0 = np.full(ref_basis.dim_d, cfg.epsilon)
    ref = np.stack([class_posterior_gamma(x, train, ids, ref_basis, gamma0) for x, ids in zip(test.points, q_ids)])
    difficult = difficult_split(ref, cfg.difficult_fraction)
    return Trial(train, test, q_ids, difficult)


def prediction_margin(probs: np.ndarray) -> np.ndarray:
    top2 = np.sort(probs, axis=1)[:, -2:] if probs.shape[1] > 1 else np.hstack([np.zeros((len(probs), 1)), probs])
    return top2[:, 1] - top2[:, 0]


def difficult_split(probs: np.ndarray, fraction: float) -> np.ndarray:
    """Boolean mask of the ``ceil(fraction * n)`` test points with the smallest margin."""
    margin = prediction_margin(probs)
    n_hard = int(np.ceil(fraction * len(margin)))
    order = np.lexsort((np.arange(len(margin)), margin))
    mask = np.zeros(len(margin), dtype=bool)
    mask[order[:n_hard]] = True
    return mask


@dataclass
class MethodResult:
    accuracy: float
    predictive: np.ndarray
    trace: list[list[float]] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)


def _trace_row(it, objective, train: Dataset, test: Dataset, k: int, metric) -> list[float]:
    return [
        int(it),
        float(objective),
        accuracy(knn_predict_loo(train, k, metric), train.labels),
        accuracy(knn_predict(train, test.points, k, metric), test.labels),
    ]


def run_pca(trial: Trial, cfg: ExperimentConfig, seed: int, with_trace: bool) -> MethodResult:
    train, test = trial.train, trial.test
    basis = top_eigenvectors(train.points, min(cfg.d, train.n, train.dim), center=True)
    proj = basis.vectors.T
    acc = accuracy(knn_predict(train, test.points, cfg.knn_k, proj), test.labels)
    projector = MahalanobisMetric(basis.vectors @ basis.vectors.T)
    pred = np.stack([nca_class_posterior(x, train, ids, projector) for x, ids in zip(test.points, trial.query_ids)])
    return MethodResult(acc, pred)


def run_nca(trial: Trial, cfg: ExperimentConfig, seed: int, with_trace: bool) -> MethodResult:
    train, test = trial.train, trial.test
    graph = build_graph(train, min(cfg.K, train.n - 1))
    metric, tr = train_nca(train, graph, MahalanobisMetric.identity(train.dim), max_iters=cfg.nca_max_iters)
    acc = accuracy(knn_predict(train, test.points, cfg.knn_k, metric), test.labels)
    pred = np.stack([nca_class_posterior(x, train, ids, metric) for x, ids in zip(test.points, trial.query_ids)])
    rows = []
    if with_trace:
        rows = [_trace_row(i, obj, train, test, cfg.knn_k, MahalanobisMetric(a)) for i, (obj, a) in enumerate(zip(tr.objectives, tr.metrics))]
    return MethodResult(acc, pred, rows)


def run_bnca(trial: Trial, cfg: ExperimentConfig, seed: int, with_trace: bool) -> MethodResult:
    train, test = trial.train, trial.test
    basis = top_eigenvectors(train.points, min(cfg.d, train.n, train.dim))
    graph = build_graph(train, min(cfg.K, train.n - 1))
    prior = GaussianBelief.isotropic(basis.dim_d, cfg.epsilon, cfg.sigma)
    fit = fit_bnca(train, graph, basis, prior, max_iters=cfg.max_iters, tol=cfg.tol)
    mm = map_metric(fit.posterior, basis)
    acc = accuracy(knn_predict(train, test.points, cfg.knn_k, mm), test.labels)
    pred = predictive_mcmc_batch(test.points, train, trial.query_ids, basis, fit.posterior, cfg.mcmc_T, seed)
    flags = [] if fit.trace.converged else ["not_converged"]
    rows = []
    if with_trace:
        start = surrogate_total(fit.designs, prior.mean, update_psi(fit.designs, prior.mean), fit.state.H)
        means = [prior.mean] + fit.trace.means
        bounds = [start] + fit.trace.bounds
        for i, (m, bnd) in enumerate(zip(means, bounds)):
            step = map_metric(GaussianBelief(m, fit.posterior.cov), basis)
            rows.append(_trace_row(i, bnd, train, test, cfg.knn_k, step))
    return MethodResult(acc, pred, rows, flags)


RUNNERS = {"pca": run_pca, "nca": run_nca, "bnca": run_bnca}


def _report(scores, p=None) -> dict:
    return asdict(EvalReport.from_scores(scores, p))


def run_experiment(cfg: ExperimentConfig, sweep: str = "grid") -> dict:
    """Run every (method, condition, repeat) and aggregate into a JSON-able bundle."""
    cfg.validate()
    pool = load_pool(cfg)
    methods = [m for m in ("pca", "nca", "bnca") if m in cfg.methods]
    bundle = {"config": cfg.to_dict(), "sweep": sweep, "methods": methods, "conditions": [], "traces": []}
    for cond in conditions(cfg, sweep):
        scores = {m: {"accuracy": [], "map_all": [], "map_difficult": []} for m in methods}
        flags = {m: 0 for m in methods}
        for rep in range(cfg.repeats):
            trial = make_trial(pool, cfg, cond, rep)
            for m in methods:
                res = RUNNERS[m](trial, cfg, child_seed(cfg.master_seed, m, cond.key, rep), rep < cfg.trace_repeats)
                truths = trial.test.labels
                scores[m]["accuracy"].append(res.accuracy)
                scores[m]["map_all"].append(modified_map(res.predictive, truths, cfg.tau))
                scores[m]["map_difficult"].append(
                    modified_map(res.predictive[trial.difficult], truths[trial.difficult], cfg.tau)
                )
                flags[m] += len(res.flags)
                if res.trace:
                    bundle["traces"].append(
                        {"method": m, "condition": cond.label, "repeat": rep, "columns": list(TRACE_COLUMNS), "rows": res.trace}
                    )
            log.info("%s repeat %d done", cond.label, rep)
        entry = {"label": cond.label, "per_class": cond.per_class, "noise": cond.noise, "methods": {}, "p_values": {}}
        for measure in ("accuracy", "map_all", "map_difficult"):
            pvals = {}
            if "bnca" in methods and cfg.repeats >= 2:
                for m in methods:
                    if m != "bnca":
                        pvals[m] = paired_one_tail_test(scores["bnca"][measure], scores[m][measure]).p_value
            entry["p_values"][measure] = pvals
            baselines = [m for m in methods if m != "bnca"]
            best = max(baselines, key=lambda m: np.mean(scores[m][measure])) if baselines and pvals else None
            for m in methods:
                p = pvals.get(best) if m == "bnca" and best else None
                entry["methods"].setdefault(m, {})[measure] = _report(scores[m][measure], p)
        for m in methods:
            entry["methods"][m]["flags"] = flags[m]
        bundle["conditions"].append(entry)
    return bundle


def dumps_report(bundle: dict) -> str:
    return json.dumps(bundle, indent=2, sort_keys=True, allow_nan=True) + "\n"


def table_csv(bundle: dict, measure: str = "accuracy") -> str:
    """Rows = conditions, columns = methods, cells ``mean±std`` in percent."""
    methods = list(bundle.get("methods", []))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["condition"] + methods)
    for entry in bundle.get("conditions", []):
        cells = []
        for m in methods:
            rep = entry["methods"][m][measure]
            cells.append(f"{100 * rep['mean']:.2f}±{100 * rep['std']:.2f}")
        writer.writerow([entry["label"]] + cells)
    return buf.getvalue()


def trace_csv(trace: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for it, obj, tr_acc, te_acc in trace["rows"]:
        writer.writerow([int(it), repr(float(obj)), repr(float(tr_acc)), repr(float(te_acc))])
    return buf.getvalue()


def trace_filename(trace: dict) -> str:
    cond = trace["condition"].replace("=", "").replace(" ", "_")
    return f"trace_{trace['method']}_{cond}_r{trace['repeat']}.csv"


def emit_report(bundle: dict, fmt: str, path, measure: str = "accuracy") -> list[Path]:
    """Write the bundle as JSON, or as a CSV table plus one learning-trace CSV per trace.

    Returns the paths written.
    """
    path = Path(path)
    if fmt == "json":
        path.write_text(dumps_report(bundle), encoding="utf-8")
        return [path]
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    path.write_text(table_csv(bundle, measure), encoding="utf-8")
    written = [path]
    for trace in bundle.get("traces", []):
        tpath = path.with_name(f"{path.stem}_{trace_filename(trace)}")
        tpath.write_text(trace_csv(trace), encoding="utf-8")
        written.append(tpath)
    return written
