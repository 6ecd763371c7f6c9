"""Training-set-size sweep (clean labels) on blobs or a labelled CSV.

    python3 scripts/run_size_sweep.py --sizes 5 10 20 30
    python3 scripts/run_size_sweep.py --csv data/balance.csv --standardize
"""

import argparse
import logging
from pathlib import Path

from bnca.config import BlobsSpec, ExperimentConfig
from bnca.experiment import emit_report, run_experiment, table_csv


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--csv", help="labelled CSV, last column = label")
    parser.add_argument("--standardize", action="store_true")
    parser.add_argument("--sizes", type=int, nargs="+", default=[5, 10, 20, 30])
    parser.add_argument("--repeats", type=int, default=10)
    parser.add_argument("--out", type=Path, default=Path("results/size"))
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = ExperimentConfig(
        csv_path=args.csv,
        standardize=args.standardize,
        blobs=BlobsSpec(class_count=3, pool_per_class=200, dim=20, informative=3),
        d=5,
        noise_levels=[0.0],
        per_class_sizes=args.sizes,
        test_per_class=None if args.csv else 100,
        repeats=args.repeats,
    )
    bundle = run_experiment(cfg, "size")
    args.out.mkdir(parents=True, exist_ok=True)
    emit_report(bundle, "json", args.out / "report.json")
    emit_report(bundle, "csv", args.out / "accuracy.csv")
    print(table_csv(bundle))


if __name__ == "__main__":
    main()
