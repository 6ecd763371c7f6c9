"""Label-noise sweep on the 20-D blobs fixture: prints the accuracy and difficult-split MAP tables.

    python3 scripts/run_noise_sweep.py --out results/noise
"""

import argparse
import logging
from pathlib import Path

from bnca.config import BlobsSpec, ExperimentConfig
from bnca.experiment import emit_report, run_experiment, table_csv


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", type=Path, default=Path("results/noise"))
    parser.add_argument("--repeats", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = ExperimentConfig(
        blobs=BlobsSpec(class_count=3, pool_per_class=200, dim=20, informative=3),
        noise_levels=[0.0, 0.1, 0.2, 0.3],
        per_class_sizes=[30],
        repeats=args.repeats,
        master_seed=args.seed,
    )
    bundle = run_experiment(cfg, "noise")
    args.out.mkdir(parents=True, exist_ok=True)
    emit_report(bundle, "json", args.out / "report.json")
    emit_report(bundle, "csv", args.out / "accuracy.csv")
    print(table_csv(bundle))
    print(table_csv(bundle, "map_difficult"))


if __name__ == "__main__":
    main()
