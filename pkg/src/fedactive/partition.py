"""Non-IID client partitioning and labelled/unlabelled pool construction."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class DatasetIndex:
    sample_ids: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        ids = np.asarray(self.sample_ids, dtype=np.int64)
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "sample_ids", ids)
        object.__setattr__(self, "labels", labels)
        if ids.shape != labels.shape:
            raise ConfigError("sample_ids and labels differ in length")
        if np.unique(ids).size != ids.size:
            raise ConfigError("sample ids must be unique")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ConfigError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return int(self.sample_ids.size)

    @property
    def prior(self) -> np.ndarray:
        counts = np.bincount(self.labels, minlength=self.num_classes).astype(np.float64)
        return counts / counts.sum()


@dataclass
class PartitionPlan:
    client_indices: list[np.ndarray]
    alpha: float
    prior: np.ndarray
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def num_clients(self) -> int:
        return len(self.client_indices)

    def validate(self, data: DatasetIndex) -> None:
        """Raise unless the client lists form a set partition of ``data``."""
        merged = np.concatenate(self.client_indices) if self.client_indices else np.zeros(0, np.int64)
        if merged.size != np.unique(merged).size:
            raise ConfigError("client index lists overlap")
        if not np.array_equal(np.sort(merged), np.sort(data.sample_ids)):
            raise ConfigError("client index lists do not cover the dataset")

    def to_json(self) -> str:
        doc = {
            "alpha": self.alpha,
            "seed": self.seed,
            "prior": [float(p) for p in self.prior],
            "clients": {str(k): [int(i) for i in ids] for k, ids in enumerate(self.client_indices)},
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PartitionPlan":
        doc = json.loads(text)
        clients = doc["clients"]
        indices = [np.asarray(clients[str(k)], dtype=np.int64) for k in range(len(clients))]
        return cls(indices, float(doc["alpha"]), np.asarray(doc["prior"]), doc.get("seed"))


def largest_remainder(total: int, proportions: np.ndarray) -> np.ndarray:
    """Integer allotments summing exactly to ``total``; remainders ties go to the lower index."""
    raw = total * np.asarray(proportions, dtype=np.float64)
    base = np.floor(raw).astype(np.int64)
    short = total - int(base.sum())
    if short > 0:
        order = np.lexsort((np.arange(raw.size), -(raw - base)))
        base[order[:short]] += 1
    return base


def dirichlet_partition(data: DatasetIndex, num_clients: int, alpha: float, seed: int) -> PartitionPlan:
    """Split each class over the clients by a ``Dir(alpha * 1_K)`` draw.

    Class order inside each split is shuffled with the same generator, so
    the plan depends only on ``(data, num_clients, alpha, seed)``.
    """
    if num_clients < 1:
        raise ConfigError("need at least one client")
    if not alpha > 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    if num_clients > len(data):
        raise ConfigError(f"{num_clients} clients for {len(data)} samples")
    counts = np.bincount(data.labels, minlength=data.num_classes)
    if np.any(counts == 0):
        raise ConfigError("every class needs at least one sample")

    rng = np.random.default_rng(seed)
    buckets: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
    for c in range(data.num_classes):
        ids = data.sample_ids[data.labels == c]
        ids = ids[rng.permutation(ids.size)]
        props = rng.dirichlet(np.full(num_clients, alpha)) if num_clients > 1 else np.ones(1)
        # Tiny alpha can underflow every component to zero.
        if not np.isfinite(props).all() or props.sum() <= 0:
            props = np.eye(num_clients)[rng.integers(num_clients)]
        alloc = largest_remainder(ids.size, props / props.sum())
        for k, chunk in enumerate(np.split(ids, np.cumsum(alloc)[:-1])):
            buckets[k].append(chunk)
    client_indices = [np.sort(np.concatenate(b)) for b in buckets]
    plan = PartitionPlan(client_indices, float(alpha), data.prior, seed)
    plan.validate(data)
    return plan


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def initial_label_split(client_ids, fraction: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Uniformly choose ``round_half_up(fraction * n)`` ids as the labelled pool."""
    ids = np.asarray(client_ids, dtype=np.int64)
    if not 0 < fraction < 1:
        raise ConfigError(f"labelled fraction must lie in (0, 1), got {fraction}")
    if ids.size == 0:
        raise ConfigError("cannot split an empty client pool")
    n_lab = round_half_up(fraction * ids.size)
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(ids.size)[:n_lab]
    mask = np.zeros(ids.size, dtype=bool)
    mask[chosen] = True
    return np.sort(ids[mask]), np.sort(ids[~mask])


def class_histogram(labelled_ids, labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Per-class counts of the labelled pool; ``labels`` is indexed by sample id."""
    ids = np.asarray(labelled_ids, dtype=np.int64)
    return np.bincount(np.asarray(labels)[ids], minlength=num_classes).astype(np.int64)


def tv_distance(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p, float) - np.asarray(q, float)).sum())


def client_tv_distances(plan: PartitionPlan, labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Total-variation distance of every non-empty client's class mix to the prior."""
    out = []
    for ids in plan.client_indices:
        if ids.size == 0:
            continue
        hist = class_histogram(ids, labels, num_classes)
        out.append(tv_distance(hist / hist.sum(), plan.prior))
    return np.asarray(out)
