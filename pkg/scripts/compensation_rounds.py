"""Rounds needed by each local-update variant to reach the full method's round-15 accuracy.

Trains a single phase (initial labelled pools only) for 40 rounds with the
compensation term in each of its modes and prints a per-seed table.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from fedactive import harness
from fedactive.federation import COMPENSATION_MODES


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/desk_benchmark.txt")
    ap.add_argument("--out", default="runs/compensation_rounds")
    ap.add_argument("--rounds", type=int, default=40)
    ap.add_argument("--reference-round", type=int, default=15)
    args = ap.parse_args()

    base = harness.load_config(args.config).replace(strategies=("ksas",), cycles=0, rounds=args.rounds)
    curves = {}
    for mode in COMPENSATION_MODES:
        cfg = base.replace(compensation=mode, out_dir=str(Path(args.out) / mode))
        for r in harness.run_experiment(cfg)["records"]:
            curves.setdefault((mode, r.seed), []).append(r.test_accuracy)

    print(f"{'seed':>4}{'target':>9}" + "".join(f"{m:>13}" for m in COMPENSATION_MODES))
    for seed in base.seeds:
        target = curves[("kcfu", seed)][args.reference_round - 1]
        hits = [harness.rounds_to_target(curves[(m, seed)], target) for m in COMPENSATION_MODES]
        print(f"{seed:>4}{target:>9.4f}" + "".join(f"{'never' if h is None else h:>13}" for h in hits))
    print("final accuracy:")
    for m in COMPENSATION_MODES:
        finals = [curves[(m, s)][-1] for s in base.seeds]
        print(f"  {m:<12}{sum(finals) / len(finals):.4f}")


if __name__ == "__main__":
    main()
