"""Command line entry point: ``fedactive {run,partition,score,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .errors import FedActiveError


def _apply_overrides(cfg: harness.ExperimentConfig, args) -> harness.ExperimentConfig:
    changes = {}
    if getattr(args, "seed_override", None) is not None:
        changes["seeds"] = (args.seed_override,)
    if getattr(args, "out", None):
        changes["out_dir"] = args.out
    if getattr(args, "strategies", None):
        changes["strategies"] = tuple(s.strip() for s in args.strategies.split(",") if s.strip())
    if getattr(args, "threads", None):
        changes["threads"] = args.threads
    return cfg.replace(**changes) if changes else cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedactive", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="key = value config file")
        p.add_argument("--out", help="output directory (overrides out_dir)")

    p = sub.add_parser("run", help="run an experiment grid")
    common(p)
    p.add_argument("--seed-override", type=int)
    p.add_argument("--strategies", help="comma-separated strategy list")
    p.add_argument("--threads", type=int)

    p = sub.add_parser("partition", help="write the partition plan only")
    common(p)
    p.add_argument("--seed-override", type=int)

    p = sub.add_parser("score", help="train one phase and dump acquisition scores")
    common(p)
    p.add_argument("--seed-override", type=int)
    p.add_argument("--strategies", help="strategy to score with (first entry used)")
    p.add_argument("--threads", type=int)

    p = sub.add_parser("report", help="summarize metrics.csv, optionally rounds to a target")
    common(p, config_required=False)
    p.add_argument("--target", type=float)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            if args.out:
                out = Path(args.out)
            elif args.config:
                out = Path(harness.load_config(args.config).out_dir)
            else:
                parser.error("report needs --out or --config")
            doc = harness.report(out, args.target)
            print(json.dumps(doc, indent=1, sort_keys=True))
            return 0
        cfg = _apply_overrides(harness.load_config(args.config), args)
        if args.command == "run":
            result = harness.run_experiment(cfg)
            for strategy, rows in result["summary"]["strategies"].items():
                last = rows[-1]
                print(f"{strategy}: labelled {last['labelled_fraction']:.3f} accuracy {last['mean']:.4f} +- {last['std']:.4f}")
        elif args.command == "partition":
            print(harness.run_partition(cfg))
        elif args.command == "score":
            print(harness.run_score(cfg))
    except FedActiveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
