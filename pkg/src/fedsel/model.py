"""Shared model: parameters, softmax cross-entropy loss, local SGD, evaluation."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    n_features: int
    n_classes: int
    hidden_units: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.n_features < 1 or self.hidden_units < 0:
            raise ValueError("invalid layer sizes")

    @property
    def n_params(self) -> int:
        f, c, h = self.n_features, self.n_classes, self.hidden_units
        if h == 0:
            return f * c + c
        return f * h + h + h * c + c

    @property
    def layers(self) -> list[tuple[int, int]]:
        if self.hidden_units == 0:
            return [(self.n_features, self.n_classes)]
        return [(self.n_features, self.hidden_units), (self.hidden_units, self.n_classes)]


@dataclass(frozen=True)
class ModelParams:
    values: np.ndarray
    spec: ModelSpec

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != (self.spec.n_params,):
            raise ShapeMismatch(f"expected {self.spec.n_params} parameters, got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("parameters must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def unpack(self):
        s = self.spec
        return _kernels.unpack(self.values, s.n_features, s.n_classes, s.hidden_units)


def init_params(spec: ModelSpec, rng) -> ModelParams:
    """Glorot-uniform weights per layer, zero biases."""
    parts = []
    for fan_in, fan_out in spec.layers:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        parts.append(rng.uniform(-bound, bound, fan_in * fan_out))
        parts.append(np.zeros(fan_out))
    return ModelParams(np.concatenate(parts), spec)


def zeros(spec: ModelSpec) -> ModelParams:
    return ModelParams(np.zeros(spec.n_params), spec)


def _check_batch(spec, x, y):
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[1] != spec.n_features:
        raise ShapeMismatch(f"expected {spec.n_features} features, got shape {x.shape}")
    if y.shape != (len(x),):
        raise ShapeMismatch("labels and features disagree in length")
    if len(y) == 0:
        raise ShapeMismatch("empty batch")
    if y.min() < 0 or y.max() >= spec.n_classes:
        raise ShapeMismatch("label outside model classes")
    return x, y


def loss_and_gradient(params: ModelParams, x, y) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over the batch and its gradient."""
    s = params.spec
    x, y = _check_batch(s, x, y)
    loss, grad = _kernels.loss_grad_numpy(params.values, x, y, s.n_features,
                                          s.n_classes, s.hidden_units)
    return float(loss), grad


def epoch_orders(n: int, epochs: int, rng) -> np.ndarray:
    return np.stack([rng.permutation(n) for _ in range(epochs)]).astype(np.int64)


def local_train(params: ModelParams, x, y, epochs, lr, batch_size, rng,
                backend=None) -> ModelParams:
    """E epochs of mini-batch SGD on one shard; the last short batch is kept."""
    s = params.spec
    x, y = _check_batch(s, x, y)
    orders = epoch_orders(len(y), epochs, rng)
    values = params.values.copy()
    _kernels.run_sgd(values, x, y, orders, lr, batch_size, s.n_features, s.n_classes,
                     s.hidden_units, backend=backend)
    return ModelParams(values, s)


def predict_proba(params: ModelParams, x) -> np.ndarray:
    s = params.spec
    if s.hidden_units == 0:
        w, b = params.unpack()
        logits = x @ w + b
    else:
        w1, b1, w2, b2 = params.unpack()
        logits = np.tanh(x @ w1 + b1) @ w2 + b2
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def evaluate(params: ModelParams, x, y):
    """Return ``(accuracy, mean_loss, probabilities)``; argmax ties go to the lowest class."""
    x, y = _check_batch(params.spec, x, y)
    probs = predict_proba(params, x)
    accuracy = float(np.mean(np.argmax(probs, axis=1) == y))
    picked = probs[np.arange(len(y)), y]
    loss = float(-np.mean(np.log(np.maximum(picked, np.finfo(np.float64).tiny))))
    return accuracy, loss, probs


# ---------------------------------------------------------------------------
# Binary blob: "FSMP", u32 version, u32 features, u32 classes, u32 hidden,
# u64 count, then count little-endian float64 values.
# ---------------------------------------------------------------------------

_MAGIC = b"FSMP"
_HEADER = struct.Struct("<4sIIIIQ")


def params_to_bytes(params: ModelParams) -> bytes:
    s = params.spec
    head = _HEADER.pack(_MAGIC, 1, s.n_features, s.n_classes, s.hidden_units, s.n_params)
    return head + params.values.astype("<f8").tobytes()


def params_from_bytes(blob: bytes) -> ModelParams:
    if len(blob) < _HEADER.size:
        raise ValueError("checkpoint blob shorter than its header")
    magic, version, f, c, h, count = _HEADER.unpack_from(blob)
    if magic != _MAGIC or version != 1:
        raise ValueError("not a model checkpoint")
    spec = ModelSpec(f, c, h)
    if count != spec.n_params or len(blob) != _HEADER.size + 8 * count:
        raise ShapeMismatch("checkpoint length disagrees with its header")
    return ModelParams(np.frombuffer(blob, dtype="<f8", offset=_HEADER.size), spec)


def save_params(params: ModelParams, path) -> None:
    Path(path).write_bytes(params_to_bytes(params))


def load_params(path) -> ModelParams:
    return params_from_bytes(Path(path).read_bytes())
