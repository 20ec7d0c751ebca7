"""Experiment orchestration: config files, dataset setup, metrics emission."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import logging
import typing
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .data import load_mnist, make_blobs
from .errors import ConfigError
from .federation import FederatedData, FederationConfig, MetricsRecord, Simulation
from .partition import DatasetIndex, PartitionPlan, dirichlet_partition
from .sampling import DISCREPANCY_STRATEGIES, STRATEGIES, AcquisitionRequest, score_pool

log = logging.getLogger(__name__)

METRICS_COLUMNS = ["seed", "strategy", "cycle", "round", "labelled_fraction", "test_accuracy", "seconds"]


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "synthetic_blobs"
    num_classes: int = 10
    feature_dim: int = 32
    samples_per_class: int = 600
    spread: float = 2.0
    center_seed: int = 0
    data_seed: int = 0
    mnist_path: str = "data/mnist"
    hidden: tuple[int, ...] = (64,)
    alpha: float = 0.1
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    strategies: tuple[str, ...] = ("ksas",)
    out_dir: str = "runs/default"
    record_seconds: bool = False
    dump_scores: bool = False
    # federation
    num_clients: int = 10
    participation: float = 0.8
    rounds: int = 10
    cycles: int = 5
    lam: float = 1.0
    nu: float = 0.5
    lr: float = 0.02
    epochs: int = 20
    batch_size: int = 32
    beta_a: float = 2.0
    beta_b: float = 2.0
    scoring_model: str = "client"
    compensation: str = "kcfu"
    balanced: bool = True
    target_mode: str = "mixed_input"
    initial_fraction: float = 0.1
    budget_fraction: float = 0.05
    threads: int = 1

    def __post_init__(self):
        if self.dataset not in ("synthetic_blobs", "mnist"):
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if not self.strategies:
            raise ConfigError("strategies must be non-empty")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r}; choose from {STRATEGIES}")
        if not 0 < self.initial_fraction < 1:
            raise ConfigError("initial_fraction must lie in (0, 1)")
        self.federation(self.seeds[0], self.strategies[0])

    def federation(self, seed: int, strategy: str) -> FederationConfig:
        names = {f.name for f in dataclasses.fields(FederationConfig)}
        kw = {k: getattr(self, k) for k in names if k not in ("seed", "strategy")}
        return FederationConfig(seed=seed, strategy=strategy, **kw)

    def model_spec(self, input_dim: int, num_classes: int) -> nn.ModelSpec:
        return nn.ModelSpec((input_dim, *self.hidden, num_classes))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _convert(raw: str, hint):
    raw = raw.strip()
    if hint is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if typing.get_origin(hint) is tuple:
        (inner, *_) = typing.get_args(hint)
        return tuple(inner(p.strip()) for p in raw.split(",") if p.strip())
    return hint(raw)


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines with ``#`` comments into a config."""
    parser = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",), delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string("[experiment]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    hints = typing.get_type_hints(ExperimentConfig)
    kw = {}
    for key, value in parser["experiment"].items():
        if key not in hints:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            kw[key] = _convert(value, hints[key])
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def format_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load_dataset(cfg: ExperimentConfig) -> tuple[DatasetIndex, FederatedData]:
    if cfg.dataset == "mnist":
        return load_mnist(cfg.mnist_path)
    return make_blobs(cfg.num_classes, cfg.feature_dim, cfg.samples_per_class, cfg.spread, cfg.center_seed, cfg.data_seed)


def rounds_to_target(accuracies, target: float) -> int | None:
    """First 1-based round whose accuracy reaches ``target``."""
    for i, acc in enumerate(accuracies, start=1):
        if acc >= target:
            return i
    return None


def _fmt(x: float) -> str:
    return repr(float(x))


class MetricsWriter:
    """Appends rows to ``metrics.csv`` and ``per_class.csv``, flushing every round."""

    def __init__(self, out_dir: Path, num_classes: int, record_seconds: bool):
        out_dir.mkdir(parents=True, exist_ok=True)
        self.record_seconds = record_seconds
        self._fm = open(out_dir / "metrics.csv", "w", newline="")
        self._fp = open(out_dir / "per_class.csv", "w", newline="")
        self.metrics = csv.writer(self._fm, lineterminator="\n")
        self.per_class = csv.writer(self._fp, lineterminator="\n")
        self.metrics.writerow(METRICS_COLUMNS)
        self.per_class.writerow(["seed", "strategy", "cycle", "round"] + [f"class_{c}" for c in range(num_classes)])

    def __call__(self, r: MetricsRecord):
        secs = _fmt(r.seconds) if self.record_seconds else "0.0"
        self.metrics.writerow([r.seed, r.strategy, r.cycle, r.round, _fmt(r.labelled_fraction), _fmt(r.test_accuracy), secs])
        self.per_class.writerow([r.seed, r.strategy, r.cycle, r.round] + [_fmt(v) for v in r.per_class])
        self._fm.flush()
        self._fp.flush()

    def close(self):
        self._fm.close()
        self._fp.close()


def summarize(records: list[MetricsRecord], rounds: int) -> dict:
    """Per strategy and cycle: mean and sample std of the last-round accuracy across seeds."""
    finals: dict[str, dict[int, list[MetricsRecord]]] = {}
    for r in records:
        if r.round == rounds:
            finals.setdefault(r.strategy, {}).setdefault(r.cycle, []).append(r)
    out = {}
    for strategy, cycles in finals.items():
        rows = []
        for a in sorted(cycles):
            accs = [r.test_accuracy for r in sorted(cycles[a], key=lambda r: r.seed)]
            rows.append(
                {
                    "cycle": a,
                    "labelled_fraction": float(np.mean([r.labelled_fraction for r in cycles[a]])),
                    "mean": float(np.mean(accs)),
                    "std": float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0,
                    "seeds": [r.seed for r in sorted(cycles[a], key=lambda r: r.seed)],
                    "per_seed": accs,
                }
            )
        out[strategy] = rows
    return out


def read_metrics(path) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        MetricsRecord(
            int(r["seed"]), r["strategy"], int(r["cycle"]), int(r["round"]),
            float(r["labelled_fraction"]), float(r["test_accuracy"]), np.zeros(0), float(r["seconds"]),
        )
        for r in rows
    ]


class ScoreDumper:
    def __init__(self, path: Path, labels: np.ndarray):
        self._fh = open(path, "w", newline="")
        self.writer = csv.writer(self._fh, lineterminator="\n")
        self.writer.writerow(["seed", "strategy", "cycle", "client", "id", "score", "true_class"])
        self.labels = labels

    def __call__(self, seed, strategy, cycle, client, ids, scores):
        for i, s in zip(ids, scores):
            self.writer.writerow([seed, strategy, cycle, client, int(i), _fmt(s), int(self.labels[i])])
        self._fh.flush()

    def close(self):
        self._fh.close()


def _dump_cycle_scores(sim: Simulation, dumper: ScoreDumper, cycle: int):
    cfg = sim.cfg
    if cfg.strategy not in DISCREPANCY_STRATEGIES + ("entropy", "margin"):
        return
    for c in sim.clients:
        req = AcquisitionRequest(cfg.strategy, cfg.scoring_model, cfg.lam, 0)
        pool = score_pool(req, sim.spec, c.params, c.saved_global, sim.data.features, c.unlabelled, c.histogram, cfg.batch_size)
        dumper(cfg.seed, cfg.strategy, cycle, c.cid, pool.ids, pool.scores)


def make_plan(cfg: ExperimentConfig, index: DatasetIndex, seed: int) -> PartitionPlan:
    return dirichlet_partition(index, cfg.num_clients, cfg.alpha, seed)


def run_experiment(cfg: ExperimentConfig, dataset=None) -> dict:
    """Run every (seed, strategy) pair and write metrics, partitions and a summary.

    Seeds are shared across strategies, so each strategy sees the same
    partition, initial pools and initial parameters for a given seed.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(cfg))
    index, data = dataset if dataset is not None else load_dataset(cfg)
    spec = cfg.model_spec(data.features.shape[1], data.num_classes)
    writer = MetricsWriter(out, data.num_classes, cfg.record_seconds)
    dumper = ScoreDumper(out / "scores.csv", data.labels) if cfg.dump_scores else None
    records: list[MetricsRecord] = []
    try:
        for seed in cfg.seeds:
            plan = make_plan(cfg, index, seed)
            (out / "partitions").mkdir(exist_ok=True)
            (out / "partitions" / f"seed_{seed}.json").write_text(plan.to_json())
            for strategy in cfg.strategies:
                sim = Simulation(spec, cfg.federation(seed, strategy), data, plan)
                if dumper is not None:
                    sim.before_acquire = lambda s, a: _dump_cycle_scores(s, dumper, a)
                records.extend(sim.run(on_record=writer))
    finally:
        writer.close()
        if dumper is not None:
            dumper.close()
    summary = {"rounds": cfg.rounds, "cycles": cfg.cycles, "strategies": summarize(records, cfg.rounds)}
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return {"records": records, "summary": summary, "out_dir": out}


def run_partition(cfg: ExperimentConfig, seed: int | None = None, dataset=None) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index, _ = dataset if dataset is not None else load_dataset(cfg)
    seed = cfg.seeds[0] if seed is None else seed
    path = out / f"partition_seed_{seed}.json"
    path.write_text(make_plan(cfg, index, seed).to_json())
    return path


def run_score(cfg: ExperimentConfig, dataset=None) -> Path:
    """Train one phase for the first seed and dump every client's acquisition scores."""
    strategy = cfg.strategies[0]
    if strategy not in DISCREPANCY_STRATEGIES + ("entropy", "margin"):
        raise ConfigError(f"strategy {strategy!r} has no per-sample score to dump")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index, data = dataset if dataset is not None else load_dataset(cfg)
    seed = cfg.seeds[0]
    spec = cfg.model_spec(data.features.shape[1], data.num_classes)
    fed = dataclasses.replace(cfg.federation(seed, strategy), cycles=0)
    sim = Simulation(spec, fed, data, make_plan(cfg, index, seed))
    sim.run()
    path = out / f"scores_{strategy}_seed_{seed}.csv"
    dumper = ScoreDumper(path, data.labels)
    try:
        _dump_cycle_scores(sim, dumper, 0)
    finally:
        dumper.close()
    return path


def report(out_dir, target: float | None = None) -> dict:
    """Rebuild the summary from ``metrics.csv`` and, given a target, rounds-to-target per run."""
    out = Path(out_dir)
    records = read_metrics(out / "metrics.csv")
    rounds = max((r.round for r in records), default=0)
    doc = {"rounds": rounds, "strategies": summarize(records, rounds)}
    if target is not None:
        series: dict[tuple, list[float]] = {}
        for r in sorted(records, key=lambda r: (r.seed, r.strategy, r.cycle, r.round)):
            series.setdefault((r.strategy, r.seed, r.cycle), []).append(r.test_accuracy)
        doc["target"] = target
        doc["rounds_to_target"] = [
            {"strategy": s, "seed": seed, "cycle": a, "round": rounds_to_target(accs, target)}
            for (s, seed, a), accs in sorted(series.items())
        ]
    (out / "report.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return doc
