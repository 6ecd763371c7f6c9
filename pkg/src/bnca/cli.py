"""Command-line entry point: ``bnca {train,evaluate,sweep-noise,sweep-size,report}``.

Exit codes: 0 success, 1 config error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import typing
from dataclasses import fields
from pathlib import Path

import numpy as np

from .bnca_core import GaussianBelief, fit_bnca, posterior_from_dict
from .config import BlobsSpec, ConfigError, ExperimentConfig
from .dataset import Dataset, DatasetError, load_csv
from .eigenbasis import EigenBasis, top_eigenvectors
from .experiment import emit_report, load_pool, run_experiment
from .knn_eval import accuracy, knn_predict, modified_map
from .nca import MahalanobisMetric, nca_class_posterior, train_nca
from .neighbors import build_graph, query_neighbors
from .posterior import map_metric, predictive_mcmc_batch

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("bnca")


def _flag_type(tp):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is list:
        return args[0], "+"
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", None)):
        inner = [a for a in args if a is not type(None)][0]
        return inner, None
    return tp, None


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    hints = typing.get_type_hints(ExperimentConfig)
    for f in fields(ExperimentConfig):
        if f.name == "blobs":
            continue
        tp, nargs = _flag_type(hints[f.name])
        flag = "--" + f.name.replace("_", "-")
        if tp is bool:
            parser.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            parser.add_argument(flag, dest=f.name, type=tp, nargs=nargs, default=None)
    blob_hints = typing.get_type_hints(BlobsSpec)
    for f in fields(BlobsSpec):
        tp, _ = _flag_type(blob_hints[f.name])
        parser.add_argument("--blobs-" + f.name.replace("_", "-"), dest="blobs__" + f.name, type=tp, default=None)
    parser.add_argument("--config", type=Path, help="JSON config; its keys override flags")


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    raw: dict = {}
    blobs: dict = {}
    for f in fields(ExperimentConfig):
        val = getattr(args, f.name, None)
        if f.name != "blobs" and val is not None:
            raw[f.name] = val
    for f in fields(BlobsSpec):
        val = getattr(args, "blobs__" + f.name, None)
        if val is not None:
            blobs[f.name] = val
    if args.config is not None:
        try:
            file_raw = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(file_raw, dict):
            raise ConfigError("config must be a JSON object")
        blobs.update(file_raw.pop("blobs", None) or {})
        raw.update(file_raw)
    if blobs:
        raw["blobs"] = blobs
    return ExperimentConfig.from_dict(raw)


def _dataset_blob(ds: Dataset) -> dict:
    names = list(ds.label_names) if ds.label_names is not None else list(range(ds.class_count))
    return {"points": ds.points.tolist(), "labels": ds.labels.tolist(), "label_names": names}


def _dataset_from_blob(blob: dict) -> Dataset:
    names = tuple(blob["label_names"])
    return Dataset(np.asarray(blob["points"], dtype=float), np.asarray(blob["labels"]), len(names), names)


def align_labels(test: Dataset, train: Dataset) -> Dataset:
    """Re-index ``test`` labels so that class ``k`` means the same raw label as in ``train``."""
    test_names = test.label_names if test.label_names is not None else tuple(range(test.class_count))
    index = {name: k for k, name in enumerate(train.label_names)}
    try:
        labels = np.array([index[test_names[y]] for y in test.labels], dtype=np.int64)
    except KeyError as exc:
        raise DatasetError(f"test label {exc.args[0]} never appears in the training data") from exc
    return Dataset(test.points, labels, train.class_count, train.label_names)


def train_model(cfg: ExperimentConfig, method: str, train: Dataset) -> dict:
    model = {"method": method, "knn_k": cfg.knn_k, "K": cfg.K, "mcmc_T": cfg.mcmc_T, "train": _dataset_blob(train)}
    d = min(cfg.d, train.n, train.dim)
    if method == "pca":
        model["basis"] = top_eigenvectors(train.points, d, center=True).to_dict()
    elif method == "nca":
        graph = build_graph(train, min(cfg.K, train.n - 1))
        metric, trace = train_nca(train, graph, MahalanobisMetric.identity(train.dim), max_iters=cfg.nca_max_iters)
        model["metric"] = metric.to_dict()
        model["objectives"] = trace.objectives
    else:
        basis = top_eigenvectors(train.points, d)
        graph = build_graph(train, min(cfg.K, train.n - 1))
        prior = GaussianBelief.isotropic(d, cfg.epsilon, cfg.sigma)
        fit = fit_bnca(train, graph, basis, prior, max_iters=cfg.max_iters, tol=cfg.tol)
        model["basis"] = basis.to_dict()
        model["posterior"] = fit.to_dict()
    return model


def evaluate_model(model: dict, test: Dataset, tau: float = 0.01, seed: int = 0) -> dict:
    train = _dataset_from_blob(model["train"])
    if test.dim != train.dim:
        raise DatasetError("test features do not match the model's training data")
    test = align_labels(test, train)
    k = model["knn_k"]
    q_ids = query_neighbors(train, test.points, min(model["K"], train.n))
    method = model["method"]
    if method == "pca":
        basis = EigenBasis.from_dict(model["basis"])
        metric = MahalanobisMetric(basis.vectors @ basis.vectors.T)
        preds = knn_predict(train, test.points, k, basis.vectors.T)
        probs = np.stack([nca_class_posterior(x, train, ids, metric) for x, ids in zip(test.points, q_ids)])
    elif method == "nca":
        metric = MahalanobisMetric.from_dict(model["metric"])
        preds = knn_predict(train, test.points, k, metric)
        probs = np.stack([nca_class_posterior(x, train, ids, metric) for x, ids in zip(test.points, q_ids)])
    else:
        basis = EigenBasis.from_dict(model["basis"])
        post = posterior_from_dict(model["posterior"])
        preds = knn_predict(train, test.points, k, map_metric(post, basis))
        probs = predictive_mcmc_batch(test.points, train, q_ids, basis, post, model["mcmc_T"], seed)
    return {
        "method": method,
        "n_test": int(test.n),
        "accuracy": accuracy(preds, test.labels),
        "modified_map": modified_map(probs, test.labels, tau),
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bnca", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit one method on the configured dataset and save the model")
    _add_config_flags(p)
    p.add_argument("--method", choices=["pca", "nca", "bnca"], default="bnca")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("evaluate", help="score a saved model on a labelled CSV")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--test", type=Path, required=True)
    p.add_argument("--has-header", action="store_true")
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)

    for name, sweep in (("sweep-noise", "noise"), ("sweep-size", "size")):
        p = sub.add_parser(name, help=f"repeated trials over the {sweep} conditions")
        _add_config_flags(p)
        p.add_argument("--out", type=Path, required=True, help="JSON report path")
        p.add_argument("--csv", type=Path, help="also write the accuracy table and learning traces")
        p.set_defaults(sweep=sweep)

    p = sub.add_parser("report", help="convert a JSON report to a CSV table")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--format", choices=["json", "csv"], default="csv")
    p.add_argument("--measure", choices=["accuracy", "map_all", "map_difficult"], default="accuracy")
    p.add_argument("--out", type=Path, required=True)
    return parser


def _run(args: argparse.Namespace) -> int:
    if args.command == "train":
        cfg = config_from_args(args)
        pool = load_pool(cfg)
        model = train_model(cfg, args.method, pool)
        args.out.write_text(json.dumps(model, sort_keys=True) + "\n")
        log.info("wrote %s", args.out)
    elif args.command == "evaluate":
        try:
            model = json.loads(args.model.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetError(f"cannot read model {args.model}: {exc}") from exc
        test = load_csv(args.test, has_header=args.has_header)
        print(json.dumps(evaluate_model(model, test, args.tau, args.seed), sort_keys=True))
    elif args.command in ("sweep-noise", "sweep-size"):
        cfg = config_from_args(args)
        bundle = run_experiment(cfg, args.sweep)
        emit_report(bundle, "json", args.out)
        if args.csv is not None:
            emit_report(bundle, "csv", args.csv)
    elif args.command == "report":
        try:
            bundle = json.loads(args.input.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetError(f"cannot read report {args.input}: {exc}") from exc
        emit_report(bundle, args.format, args.out, args.measure)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
