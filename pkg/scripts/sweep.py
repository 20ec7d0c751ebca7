"""One-parameter sweep over a config, e.g. lambda, client count or participation.

    python3 scripts/sweep.py lam 0,0.5,1,2 --strategies ksas
    python3 scripts/sweep.py num_clients 5,10,20
    python3 scripts/sweep.py participation 0.2,0.5,0.8,1.0
"""

from __future__ import annotations

import argparse
import typing
from pathlib import Path

from fedactive import harness


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("key", help="ExperimentConfig field to vary")
    ap.add_argument("values", help="comma-separated values")
    ap.add_argument("--config", default="configs/desk_benchmark.txt")
    ap.add_argument("--strategies", help="override the strategy list")
    ap.add_argument("--out", default="runs/sweep")
    args = ap.parse_args()

    hints = typing.get_type_hints(harness.ExperimentConfig)
    if args.key not in hints:
        raise SystemExit(f"unknown config key {args.key!r}")
    cast = hints[args.key]
    base = harness.load_config(args.config)
    if args.strategies:
        base = base.replace(strategies=tuple(args.strategies.split(",")))

    print(f"{args.key:>14}{'strategy':>16}{'final mean':>12}{'std':>9}")
    for raw in args.values.split(","):
        value = cast(raw)
        cfg = base.replace(**{args.key: value, "out_dir": str(Path(args.out) / f"{args.key}_{raw}")})
        summary = harness.run_experiment(cfg)["summary"]["strategies"]
        for strategy, rows in summary.items():
            print(f"{raw:>14}{strategy:>16}{rows[-1]['mean']:>12.4f}{rows[-1]['std']:>9.4f}")


if __name__ == "__main__":
    main()
