"""Multilayer perceptron with a softmax head and hand-written backprop.

Parameters live in one flat float64 vector. Layer ``l`` occupies a
``(fan_in, fan_out)`` weight block (row-major) followed by its ``fan_out``
biases. Hidden layers use ReLU; the last layer emits raw logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalFailure

EPS = 1e-12


@dataclass(frozen=True)
class ModelSpec:
    layer_widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ConfigError("layer_widths needs at least an input and an output width")
        if any(w < 1 for w in widths):
            raise ConfigError(f"layer widths must be >= 1, got {widths}")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def num_classes(self) -> int:
        return self.layer_widths[-1]

    @property
    def shapes(self) -> list[tuple[int, int]]:
        w = self.layer_widths
        return [(w[i], w[i + 1]) for i in range(len(w) - 1)]

    @property
    def num_params(self) -> int:
        return sum(a * b + b for a, b in self.shapes)


def unpack(spec: ModelSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of ``params`` as ``[(W, b), ...]``; no copies."""
    if params.ndim != 1 or params.shape[0] != spec.num_params:
        raise ConfigError(
            f"parameter vector has shape {params.shape}, expected ({spec.num_params},)"
        )
    layers = []
    offset = 0
    for fan_in, fan_out in spec.shapes:
        w = params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = params[offset : offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def init_params(spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    params = np.zeros(spec.num_params)
    for w, _ in unpack(spec, params):
        bound = 1.0 / np.sqrt(w.shape[0])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return params


def _check_inputs(spec: ModelSpec, inputs: np.ndarray) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ConfigError(f"inputs of shape {np.shape(inputs)} do not match input width {spec.input_dim}")
    return x


def _forward_cache(spec, params, inputs):
    x = _check_inputs(spec, inputs)
    layers = unpack(spec, params)
    acts = [x]
    h = x
    for i, (w, b) in enumerate(layers):
        h = h @ w + b
        if i < len(layers) - 1:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return layers, acts


def forward(spec: ModelSpec, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """Logits of shape ``(B, C)``."""
    return _forward_cache(spec, params, inputs)[1][-1]


def penultimate(spec: ModelSpec, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """Activations feeding the output layer (the inputs themselves for a single-layer net)."""
    return _forward_cache(spec, params, inputs)[1][-2]


def forward_backward(spec, params, inputs, loss_grad_fn):
    """Run the net, let ``loss_grad_fn(logits) -> (loss, dlogits)`` score it, backprop.

    Returns ``(loss, flat_grad)``.
    """
    layers, acts = _forward_cache(spec, params, inputs)
    loss, delta = loss_grad_fn(acts[-1])
    grad = np.empty_like(params)
    grad_layers = unpack(spec, grad)
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        gw, gb = grad_layers[i]
        gw[...] = acts[i].T @ delta
        gb[...] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ w.T) * (acts[i] > 0)
    return loss, grad


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _log_counts(counts, num_classes: int) -> np.ndarray:
    n = np.asarray(counts, dtype=np.float64)
    if n.shape != (num_classes,):
        raise ConfigError(f"class histogram has shape {n.shape}, expected ({num_classes},)")
    with np.errstate(divide="ignore"):
        return np.log(n)


def balanced_ce_from_logits(logits: np.ndarray, labels: np.ndarray, counts) -> tuple[float, np.ndarray]:
    """Count-adjusted softmax cross-entropy and its gradient w.r.t. the logits.

    A class with zero count drops out of the normalizer. Uniform counts give
    plain cross-entropy.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    num_classes = logits.shape[1]
    if labels.shape != (logits.shape[0],):
        raise ValueError("labels must be a vector aligned with the logits rows")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    log_n = _log_counts(counts, num_classes)
    if labels.size and not np.all(np.isfinite(log_n[labels])):
        raise ValueError("a label in the batch has zero count in the histogram")
    adjusted = logits + log_n
    logp = log_softmax(adjusted)
    rows = np.arange(labels.size)
    batch = max(labels.size, 1)
    loss = -logp[rows, labels].sum() / batch
    dlogits = np.exp(logp)
    dlogits[rows, labels] -= 1.0
    return float(loss), dlogits / batch


def balanced_ce(spec, params, inputs, labels, counts) -> tuple[float, np.ndarray]:
    """Balanced cross-entropy of the net on a labelled batch; returns ``(loss, grad)``."""
    return forward_backward(
        spec, params, inputs, lambda logits: balanced_ce_from_logits(logits, labels, counts)
    )


def kl_divergence(p, q) -> float | np.ndarray:
    """``sum p ln(p/q)`` over the last axis with both sides clamped to ``[EPS, 1]``."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    p = np.clip(p, EPS, 1.0)
    q = np.clip(q, EPS, 1.0)
    out = (p * (np.log(p) - np.log(q))).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def sgd_step(params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    if lr < 0:
        raise ConfigError(f"learning rate must be non-negative, got {lr}")
    if not np.all(np.isfinite(grad)):
        raise NumericalFailure("non-finite gradient")
    with np.errstate(over="ignore", invalid="ignore"):
        out = params - lr * grad
    if not np.all(np.isfinite(out)):
        raise NumericalFailure("parameter update overflowed")
    return out


def predict(spec: ModelSpec, params: np.ndarray, inputs: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    out = [forward(spec, params, inputs[i : i + batch_size]).argmax(axis=1) for i in range(0, len(inputs), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
