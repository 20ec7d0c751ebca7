"""Federated active learning loop: local updates with global-to-local
distillation, labelled-size weighted aggregation and per-cycle acquisition."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, NumericalFailure, ProtocolError
from .partition import PartitionPlan, class_histogram, initial_label_split, round_half_up
from .sampling import AcquisitionRequest, acquire

log = logging.getLogger(__name__)

# Stream tags for derived generators.
_INIT, _SPLIT, _SELECT, _LOCAL, _ACQUIRE = 1, 2, 3, 4, 5

COMPENSATION_MODES = ("kcfu", "nomix", "fixed_gamma", "none")
TARGET_MODES = ("mixed_input", "mixed_logits")


def stream(seed: int, *tags: int) -> np.random.Generator:
    """Independent generator keyed by ``(seed, *tags)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, tags)]))


@dataclass(frozen=True)
class FederationConfig:
    num_clients: int = 10
    participation: float = 0.8
    rounds: int = 50
    cycles: int = 5
    lam: float = 1.0
    nu: float = 0.5
    lr: float = 0.1
    epochs: int = 40
    batch_size: int = 128
    beta_a: float = 2.0
    beta_b: float = 2.0
    seed: int = 0
    strategy: str = "ksas"
    scoring_model: str = "client"
    compensation: str = "kcfu"
    balanced: bool = True
    target_mode: str = "mixed_input"
    initial_fraction: float = 0.1
    budget_fraction: float = 0.05
    threads: int = 1

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigError("num_clients must be >= 1")
        if not 0 < self.participation <= 1:
            raise ConfigError("participation must lie in (0, 1]")
        if self.rounds < 1 or self.cycles < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("rounds >= 1, cycles >= 0, epochs >= 0 and batch_size >= 1 required")
        if not 0 <= self.nu <= 1:
            raise ConfigError("nu must lie in [0, 1]")
        if self.lr < 0 or self.beta_a <= 0 or self.beta_b <= 0:
            raise ConfigError("lr must be >= 0 and beta shapes > 0")
        if self.compensation not in COMPENSATION_MODES:
            raise ConfigError(f"compensation must be one of {COMPENSATION_MODES}")
        if self.target_mode not in TARGET_MODES:
            raise ConfigError(f"target_mode must be one of {TARGET_MODES}")
        if not 0 < self.initial_fraction < 1 or not 0 <= self.budget_fraction < 1:
            raise ConfigError("initial_fraction in (0, 1) and budget_fraction in [0, 1) required")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        # validates strategy, scoring model and lambda
        AcquisitionRequest(self.strategy, self.scoring_model, self.lam, 0)

    @property
    def clients_per_round(self) -> int:
        return max(1, math.ceil(self.participation * self.num_clients - 1e-12))


@dataclass
class ClientState:
    cid: int
    params: np.ndarray
    labelled: np.ndarray
    unlabelled: np.ndarray
    histogram: np.ndarray
    saved_global: np.ndarray
    budget: int = 0

    @property
    def num_labelled(self) -> int:
        return int(self.histogram.sum())

    @property
    def pool_size(self) -> int:
        return int(self.labelled.size + self.unlabelled.size)


@dataclass
class ServerState:
    params: np.ndarray
    initial_params: np.ndarray
    round: int = 0
    cycle: int = 0


@dataclass
class MixedBatch:
    inputs: np.ndarray
    beta: np.ndarray
    pairs: np.ndarray  # (B, 2) row indices into the unmixed batch
    gamma: np.ndarray


@dataclass
class MetricsRecord:
    seed: int
    strategy: str
    cycle: int
    round: int
    labelled_fraction: float
    test_accuracy: float
    per_class: np.ndarray = field(repr=False)
    seconds: float = 0.0


def select_clients(num_clients: int, participation: float, rng: np.random.Generator) -> np.ndarray:
    m = max(1, math.ceil(participation * num_clients - 1e-12))
    if m > num_clients:
        raise ConfigError("more clients requested than exist")
    return np.sort(rng.choice(num_clients, size=m, replace=False))


def gamma_weight(pseudo_labels, histogram) -> np.ndarray:
    """Inverse-frequency weight ``N / n_y``; an unseen class gets ``N``."""
    n = np.asarray(histogram, dtype=np.float64)
    total = n.sum()
    if total < 1:
        raise ValueError("gamma weight needs a non-empty labelled pool")
    ny = n[np.asarray(pseudo_labels)]
    return np.where(ny > 0, total / np.where(ny > 0, ny, 1.0), total)


def make_mixed_batch(x, gamma, rng, beta_a=2.0, beta_b=2.0, mix=True) -> MixedBatch:
    """Pair the batch with a permutation of itself and mix with per-sample Beta weights."""
    x = np.asarray(x, dtype=np.float64)
    b = x.shape[0]
    first = np.arange(b)
    if mix:
        second = rng.permutation(b)
        beta = rng.beta(beta_a, beta_b, size=b)
    else:
        second = first.copy()
        beta = np.ones(b)
    mixed = beta[:, None] * x[first] + (1 - beta)[:, None] * x[second]
    g = np.asarray(gamma, dtype=np.float64)
    return MixedBatch(mixed, beta, np.stack([first, second], axis=1), beta * g[first] + (1 - beta) * g[second])


def _distill_from_logits(client_logits, target_logits, weights):
    """Weighted mean ``KL(softmax(target) || softmax(client))`` and its logit gradient."""
    p = nn.softmax(target_logits)
    logp = nn.log_softmax(target_logits)
    logq = nn.log_softmax(client_logits)
    kl = (p * (logp - logq)).sum(axis=1)
    b = client_logits.shape[0]
    loss = float((weights * kl).sum() / b)
    dlogits = weights[:, None] * (np.exp(logq) - p) / b
    return loss, dlogits


def compensation_from_mixed(spec, client_params, global_params, mixed: MixedBatch, x=None, target_mode="mixed_input"):
    """Distillation loss on an already-built mixed batch; the global side is constant."""
    if mixed.inputs.shape[0] == 0:
        return 0.0, np.zeros_like(client_params)
    if target_mode == "mixed_input":
        z = nn.forward(spec, global_params, mixed.inputs)
    elif target_mode == "mixed_logits":
        g = nn.forward(spec, global_params, x)
        beta = mixed.beta[:, None]
        z = beta * g[mixed.pairs[:, 0]] + (1 - beta) * g[mixed.pairs[:, 1]]
    else:
        raise ConfigError(f"unknown target_mode {target_mode!r}")
    return nn.forward_backward(
        spec, client_params, mixed.inputs, lambda h: _distill_from_logits(h, z, mixed.gamma)
    )


def compensation_loss(
    spec,
    client_params,
    global_params,
    x_unlabelled,
    histogram,
    rng,
    beta_params=(2.0, 2.0),
    mix=True,
    gamma_mode="inverse",
    target_mode="mixed_input",
):
    """Returns ``(loss, grad w.r.t. client_params)``.

    Pseudo-labels come from the global model on the unmixed inputs; their
    weights are mixed linearly along with the inputs.
    """
    x = np.asarray(x_unlabelled, dtype=np.float64)
    if x.shape[0] == 0:
        return 0.0, np.zeros_like(client_params)
    if gamma_mode == "inverse":
        pseudo = nn.forward(spec, global_params, x).argmax(axis=1)
        gamma = gamma_weight(pseudo, histogram)
    elif gamma_mode == "fixed":
        gamma = np.full(x.shape[0], 1.0 / spec.num_classes)
    else:
        raise ConfigError(f"unknown gamma_mode {gamma_mode!r}")
    mixed = make_mixed_batch(x, gamma, rng, *beta_params, mix=mix)
    return compensation_from_mixed(spec, client_params, global_params, mixed, x, target_mode)


def kcfu_loss(spec, params, global_params, x_lab, y_lab, counts, x_unl, histogram, rng, nu=0.5, **comp_kw):
    """``nu * balanced_ce + (1 - nu) * compensation``; ``counts`` feeds the CE term only."""
    l_client, g_client = nn.balanced_ce(spec, params, x_lab, y_lab, counts)
    l_comp, g_comp = compensation_loss(spec, params, global_params, x_unl, histogram, rng, **comp_kw)
    return nu * l_client + (1 - nu) * l_comp, nu * g_client + (1 - nu) * g_comp


def local_update(
    spec: nn.ModelSpec,
    global_params: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    labelled: np.ndarray,
    unlabelled: np.ndarray,
    histogram: np.ndarray,
    cfg: FederationConfig,
    first_round: bool,
    rng: np.random.Generator,
) -> np.ndarray:
    """Train a copy of ``global_params`` on one client's pools for ``cfg.epochs`` epochs."""
    params = global_params.copy()
    if labelled.size == 0:
        return params
    counts = histogram if cfg.balanced else np.ones(spec.num_classes)
    compensate = not first_round and cfg.compensation != "none"
    comp_kw = dict(
        beta_params=(cfg.beta_a, cfg.beta_b),
        mix=cfg.compensation != "nomix",
        gamma_mode="fixed" if cfg.compensation == "fixed_gamma" else "inverse",
        target_mode=cfg.target_mode,
    )
    bs = cfg.batch_size
    # Separate streams keep the batch order independent of compensation draws.
    shuffle_rng, comp_rng = rng.spawn(2)
    for _ in range(cfg.epochs):
        order = labelled[shuffle_rng.permutation(labelled.size)]
        for start in range(0, order.size, bs):
            ids = order[start : start + bs]
            x, y = features[ids], labels[ids]
            if not compensate:
                _, grad = nn.balanced_ce(spec, params, x, y, counts)
            else:
                if unlabelled.size == 0:
                    uids = unlabelled
                else:
                    uids = comp_rng.choice(unlabelled, size=bs, replace=unlabelled.size < bs)
                _, grad = kcfu_loss(
                    spec, params, global_params, x, y, counts, features[uids], histogram, comp_rng, cfg.nu, **comp_kw
                )
            params = nn.sgd_step(params, grad, cfg.lr)
    return params


def aggregation_weights(sizes) -> np.ndarray:
    """Normalized FedAvg weights N_k / sum(N); raises when nobody holds labels."""
    sizes = np.asarray(sizes, dtype=np.float64)
    if sizes.size == 0:
        raise ProtocolError("no clients to aggregate")
    if np.any(sizes < 0):
        raise ProtocolError("negative labelled-pool size")
    total = sizes.sum()
    if total <= 0:
        raise ProtocolError("participating clients hold no labelled data")
    return sizes / total


def aggregate(client_params: list[np.ndarray], sizes) -> np.ndarray:
    """Labelled-pool-size weighted average of client parameters."""
    if len(client_params) != len(sizes):
        raise ProtocolError("one size per client required")
    weights = aggregation_weights(sizes)
    live = np.flatnonzero(weights > 0)
    if live.size == 1:
        # exact copy: avoids 0.0 + 1.0 * x flipping the sign of negative zeros
        return client_params[live[0]].copy()
    out = np.zeros_like(client_params[0])
    for k in live:
        out += weights[k] * client_params[k]
    return out


def evaluate(spec, params, x_test, y_test, num_classes) -> tuple[float, np.ndarray]:
    pred = nn.predict(spec, params, x_test)
    correct = pred == y_test
    per_class = np.array(
        [correct[y_test == c].mean() if np.any(y_test == c) else np.nan for c in range(num_classes)]
    )
    return float(correct.mean()), per_class


def build_clients(plan: PartitionPlan, labels, num_classes, cfg: FederationConfig, init_params) -> list[ClientState]:
    clients = []
    for k, ids in enumerate(plan.client_indices):
        if ids.size:
            lab, unl = initial_label_split(ids, cfg.initial_fraction, stream(cfg.seed, _SPLIT, k))
        else:
            lab, unl = ids.copy(), ids.copy()
        clients.append(
            ClientState(
                cid=k,
                params=init_params.copy(),
                labelled=lab,
                unlabelled=unl,
                histogram=class_histogram(lab, labels, num_classes),
                saved_global=init_params.copy(),
                budget=round_half_up(cfg.budget_fraction * ids.size),
            )
        )
    return clients


@dataclass
class FederatedData:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    test_features: np.ndarray
    test_labels: np.ndarray


class Simulation:
    """One seeded run: ``cycles + 1`` training phases with an acquisition step between them."""

    before_acquire = None  # optional hook(sim, cycle), e.g. for score dumps

    def __init__(self, spec: nn.ModelSpec, cfg: FederationConfig, data: FederatedData, plan: PartitionPlan):
        if plan.num_clients != cfg.num_clients:
            raise ConfigError("partition plan and config disagree on the client count")
        self.spec = spec
        self.cfg = cfg
        self.data = data
        init = nn.init_params(spec, stream(cfg.seed, _INIT))
        self.server = ServerState(params=init.copy(), initial_params=init)
        self.clients = build_clients(plan, data.labels, data.num_classes, cfg, init)
        self.total_pool = sum(c.pool_size for c in self.clients)

    def labelled_fraction(self) -> float:
        return sum(c.labelled.size for c in self.clients) / max(self.total_pool, 1)

    def _local(self, k: int, snapshot: np.ndarray, t: int) -> np.ndarray:
        c = self.clients[k]
        try:
            return local_update(
                self.spec, snapshot, self.data.features, self.data.labels, c.labelled, c.unlabelled,
                c.histogram, self.cfg, t == 1, stream(self.cfg.seed, _LOCAL, t, k),
            )
        except NumericalFailure as exc:
            raise NumericalFailure(f"cycle {self.server.cycle} round {t} client {k}: {exc}") from exc

    def train_round(self, t: int, pool: ThreadPoolExecutor | None = None) -> np.ndarray:
        cfg = self.cfg
        selected = select_clients(cfg.num_clients, cfg.participation, stream(cfg.seed, _SELECT, t))
        snapshot = self.server.params.copy()
        if pool is None:
            updated = [self._local(k, snapshot, t) for k in selected]
        else:
            updated = list(pool.map(lambda k: self._local(k, snapshot, t), selected))
        for k, p in zip(selected, updated):
            self.clients[k].params = p
        self.server.params = aggregate(updated, [self.clients[k].num_labelled for k in selected])
        self.server.round = t
        for k in selected:
            self.clients[k].saved_global = self.server.params.copy()
        return selected

    def acquire_all(self, cycle: int) -> None:
        cfg = self.cfg
        for c in self.clients:
            req = AcquisitionRequest(cfg.strategy, cfg.scoring_model, cfg.lam, min(c.budget, c.unlabelled.size))
            picked = acquire(
                req, self.spec, c.params, c.saved_global, self.data.features, c.labelled, c.unlabelled,
                c.histogram, stream(cfg.seed, _ACQUIRE, cycle, c.cid), cfg.batch_size,
            )
            if picked.size:
                c.labelled = np.sort(np.concatenate([c.labelled, picked]))
                c.unlabelled = np.setdiff1d(c.unlabelled, picked, assume_unique=True)
                c.histogram = class_histogram(c.labelled, self.data.labels, self.data.num_classes)

    def run(self, on_record=None) -> list[MetricsRecord]:
        cfg = self.cfg
        records = []
        pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
        try:
            for a in range(cfg.cycles + 1):
                self.server.cycle = a
                self.server.params = self.server.initial_params.copy()
                frac = self.labelled_fraction()
                for t in range(1, cfg.rounds + 1):
                    tic = time.perf_counter()
                    self.train_round(t, pool)
                    acc, per_class = evaluate(
                        self.spec, self.server.params, self.data.test_features, self.data.test_labels,
                        self.data.num_classes,
                    )
                    rec = MetricsRecord(cfg.seed, cfg.strategy, a, t, frac, acc, per_class, time.perf_counter() - tic)
                    records.append(rec)
                    if on_record is not None:
                        on_record(rec)
                log.info("seed %d %s cycle %d: labelled %.3f acc %.4f", cfg.seed, cfg.strategy, a, frac, acc)
                if a < cfg.cycles:
                    if self.before_acquire is not None:
                        self.before_acquire(self, a)
                    self.acquire_all(a)
        finally:
            if pool is not None:
                pool.shutdown()
        return records
