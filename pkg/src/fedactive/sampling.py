"""Acquisition scores and selection over a client's unlabelled pool."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError

log = logging.getLogger(__name__)

STRATEGIES = ("ksas", "vanilla_kl", "reversed_ksas", "entropy", "margin", "coreset", "random")
DISCREPANCY_STRATEGIES = ("ksas", "vanilla_kl", "reversed_ksas")
SCORING_MODELS = ("client", "global")


@dataclass(frozen=True)
class AcquisitionRequest:
    strategy: str = "ksas"
    scoring_model: str = "client"
    lam: float = 1.0
    budget: int = 1

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.scoring_model not in SCORING_MODELS:
            raise ConfigError(f"unknown scoring model {self.scoring_model!r}")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ConfigError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.budget < 0:
            raise ConfigError("budget must be non-negative")


@dataclass
class ScoredPool:
    ids: np.ndarray
    scores: np.ndarray


def substitute_counts(counts) -> np.ndarray:
    """Replace zero counts by one; all-zero histograms become uniform."""
    n = np.asarray(counts, dtype=np.float64)
    if np.any(n < 0):
        raise ValueError("class counts must be non-negative")
    zeros = n == 0
    if zeros.any():
        log.debug("substituting count 1 for %d zero-count classes", int(zeros.sum()))
    return np.where(zeros, 1.0, n)


def ks_prob(logits, counts, lam: float, reverse: bool = False) -> np.ndarray:
    """Softmax of the logits with each class re-weighted by ``n_c ** lam``.

    Works row-wise on a ``(B, C)`` matrix. ``reverse`` uses ``1 / n_c``.
    """
    n = substitute_counts(counts)
    log_w = np.log(n)
    if reverse:
        log_w = -log_w
    return nn.softmax(np.asarray(logits, dtype=np.float64) + lam * log_w)


def symmetric_kl(p, q):
    return nn.kl_divergence(p, q) + nn.kl_divergence(q, p)


def ksas_score(client_logits, global_logits, counts, lam: float, reverse: bool = False):
    """Count-weighted symmetric KL between client and global predictions."""
    p = ks_prob(client_logits, counts, lam, reverse)
    q = ks_prob(global_logits, counts, lam, reverse)
    return symmetric_kl(p, q)


def reversed_ksas_score(client_logits, global_logits, counts, lam: float):
    return ksas_score(client_logits, global_logits, counts, lam, reverse=True)


def vanilla_kl_score(client_logits, global_logits):
    return symmetric_kl(nn.softmax(client_logits), nn.softmax(global_logits))


def entropy_score(probs):
    p = np.clip(np.asarray(probs, dtype=np.float64), nn.EPS, 1.0)
    out = -(p * np.log(p)).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def margin_score(probs):
    p = np.asarray(probs, dtype=np.float64)
    if p.shape[-1] < 2:
        raise ValueError("margin needs at least two classes")
    top2 = np.sort(p, axis=-1)[..., -2:]
    out = top2[..., 1] - top2[..., 0]
    return float(out) if out.ndim == 0 else out


def select_top(pool: ScoredPool, b: int, largest: bool = True) -> np.ndarray:
    """Ids of the ``b`` best scores, ties to the lower id, in rank order."""
    ids = np.asarray(pool.ids, dtype=np.int64)
    scores = np.asarray(pool.scores, dtype=np.float64)
    if ids.shape != scores.shape:
        raise ValueError("ids and scores differ in length")
    if b > ids.size:
        raise ValueError(f"budget {b} exceeds pool size {ids.size}")
    key = -scores if largest else scores
    order = np.lexsort((ids, key))
    return ids[order[:b]]


def coreset_select(features: np.ndarray, labelled_ids, unlabelled_ids, b: int) -> np.ndarray:
    """Greedy k-center over the unlabelled pool.

    ``features`` is indexed by sample id. Each step takes the unlabelled
    point farthest from every labelled or already chosen point; ties go to
    the lower id. With no labelled points the feature mean seeds the centers.
    """
    lab = np.asarray(labelled_ids, dtype=np.int64)
    unl = np.sort(np.asarray(unlabelled_ids, dtype=np.int64))
    if b > unl.size:
        raise ValueError(f"budget {b} exceeds pool size {unl.size}")
    if b == 0:
        return np.zeros(0, dtype=np.int64)
    x = np.asarray(features, dtype=np.float64)
    cand = x[unl]
    if lab.size:
        centers = x[lab]
    else:
        centers = x[np.concatenate([lab, unl])].mean(axis=0, keepdims=True)
    min_d = np.full(unl.size, np.inf)
    for start in range(0, centers.shape[0], 1024):
        block = centers[start : start + 1024]
        d = np.sqrt(((cand[:, None, :] - block[None, :, :]) ** 2).sum(axis=-1))
        min_d = np.minimum(min_d, d.min(axis=1))
    chosen = []
    for _ in range(b):
        j = int(np.argmax(min_d))
        chosen.append(unl[j])
        d = np.sqrt(((cand - cand[j]) ** 2).sum(axis=1))
        min_d = np.minimum(min_d, d)
        min_d[j] = -np.inf
    return np.asarray(chosen, dtype=np.int64)


def _batched(fn, x, batch_size):
    return np.concatenate([fn(x[i : i + batch_size]) for i in range(0, len(x), batch_size)])


def score_pool(
    request: AcquisitionRequest,
    spec: nn.ModelSpec,
    client_params: np.ndarray,
    global_params: np.ndarray,
    features: np.ndarray,
    unlabelled_ids,
    counts,
    batch_size: int = 256,
) -> ScoredPool:
    """Score every unlabelled id with a score-based strategy (not coreset/random)."""
    ids = np.asarray(unlabelled_ids, dtype=np.int64)
    x = features[ids]
    if ids.size == 0:
        return ScoredPool(ids, np.zeros(0))
    s = request.strategy
    if s in DISCREPANCY_STRATEGIES:
        lc = _batched(lambda b: nn.forward(spec, client_params, b), x, batch_size)
        lg = _batched(lambda b: nn.forward(spec, global_params, b), x, batch_size)
        if s == "ksas":
            scores = ksas_score(lc, lg, counts, request.lam)
        elif s == "reversed_ksas":
            scores = reversed_ksas_score(lc, lg, counts, request.lam)
        else:
            scores = ksas_score(lc, lg, counts, 0.0)
    elif s in ("entropy", "margin"):
        params = client_params if request.scoring_model == "client" else global_params
        probs = nn.softmax(_batched(lambda b: nn.forward(spec, params, b), x, batch_size))
        scores = entropy_score(probs) if s == "entropy" else margin_score(probs)
    else:
        raise ConfigError(f"strategy {s!r} has no per-sample score")
    return ScoredPool(ids, np.atleast_1d(scores))


def acquire(
    request: AcquisitionRequest,
    spec: nn.ModelSpec,
    client_params: np.ndarray,
    global_params: np.ndarray,
    features: np.ndarray,
    labelled_ids,
    unlabelled_ids,
    counts,
    rng: np.random.Generator,
    batch_size: int = 256,
) -> np.ndarray:
    """Pick ``request.budget`` ids from the unlabelled pool (capped at its size)."""
    unl = np.sort(np.asarray(unlabelled_ids, dtype=np.int64))
    b = min(request.budget, unl.size)
    if b == 0:
        return np.zeros(0, dtype=np.int64)
    s = request.strategy
    if s == "random":
        return np.sort(rng.choice(unl, size=b, replace=False))
    if s == "coreset":
        params = client_params if request.scoring_model == "client" else global_params
        pool = np.concatenate([np.asarray(labelled_ids, dtype=np.int64), unl])
        feats = np.zeros((features.shape[0], spec.layer_widths[-2]))
        feats[pool] = _batched(lambda x: nn.penultimate(spec, params, x), features[pool], batch_size)
        return coreset_select(feats, labelled_ids, unl, b)
    pool = score_pool(request, spec, client_params, global_params, features, unl, counts, batch_size)
    return select_top(pool, b, largest=(s != "margin"))
