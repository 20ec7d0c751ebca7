"""Run a config file and print mean +- std final accuracy per strategy and cycle.

    python3 scripts/run_benchmark.py configs/desk_benchmark.txt --out runs/desk
"""

from __future__ import annotations

import argparse
import logging

from fedactive import harness


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config")
    ap.add_argument("--out")
    ap.add_argument("--seeds", help="comma-separated seed list")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    cfg = harness.load_config(args.config).replace(threads=args.threads)
    if args.out:
        cfg = cfg.replace(out_dir=args.out)
    if args.seeds:
        cfg = cfg.replace(seeds=tuple(int(s) for s in args.seeds.split(",")))
    result = harness.run_experiment(cfg)

    print(f"{'strategy':<16}{'cycle':>6}{'labelled':>10}{'mean':>9}{'std':>9}")
    for strategy, rows in result["summary"]["strategies"].items():
        for row in rows:
            print(f"{strategy:<16}{row['cycle']:>6}{row['labelled_fraction']:>10.3f}{row['mean']:>9.4f}{row['std']:>9.4f}")
    print(f"outputs in {result['out_dir']}")


if __name__ == "__main__":
    main()
