"""Desk-scale differentiable classifiers.

A multinomial softmax linear model and a one-hidden-layer tanh perceptron,
with closed-form gradients. Parameters flatten layer-major, weights row-major
with the bias appended, and each layer maps 1:1 onto a GradientVector segment
named ``layer0``, ``layer1``, ... All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, LayoutError, ShapeError
from .numerics import GradientVector
from .seeds import stream

ARCH_KINDS = ("linear", "mlp")


@dataclass(frozen=True)
class Architecture:
    kind: str
    d_in: int
    classes: int
    hidden: int | None = None

    def __post_init__(self):
        if self.kind not in ARCH_KINDS:
            raise ConfigError(f"unknown architecture {self.kind!r}; expected one of {ARCH_KINDS}")
        if self.d_in < 1 or self.classes < 2:
            raise ConfigError(f"need d_in >= 1 and classes >= 2, got {self.d_in}, {self.classes}")
        if self.kind == "mlp" and (self.hidden is None or self.hidden < 1):
            raise ConfigError("mlp architecture needs hidden >= 1")
        if self.kind == "linear" and self.hidden is not None:
            raise ConfigError("linear architecture takes no hidden size")

    def layer_dims(self) -> tuple[tuple[int, int], ...]:
        """(fan_in, fan_out) per layer."""
        if self.kind == "linear":
            return ((self.d_in, self.classes),)
        return ((self.d_in, self.hidden), (self.hidden, self.classes))

    @property
    def segment_ids(self) -> tuple[str, ...]:
        return tuple(f"layer{i}" for i in range(len(self.layer_dims())))


@dataclass(frozen=True, eq=False)
class ModelParameters:
    arch: Architecture
    layers: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __post_init__(self):
        dims = self.arch.layer_dims()
        if len(self.layers) != len(dims):
            raise ShapeError(f"expected {len(dims)} layers, got {len(self.layers)}")
        frozen = []
        for (fan_in, fan_out), (weights, bias) in zip(dims, self.layers):
            w = np.array(weights, dtype=np.float64)
            b = np.array(bias, dtype=np.float64)
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise ShapeError(
                    f"layer shape mismatch: got {w.shape}/{b.shape}, "
                    f"expected {(fan_in, fan_out)}/{(fan_out,)}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ShapeError("parameters contain non-finite entries")
            w.setflags(write=False)
            b.setflags(write=False)
            frozen.append((w, b))
        object.__setattr__(self, "layers", tuple(frozen))

    @property
    def total_dim(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)


@dataclass(frozen=True, eq=False)
class Batch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels, dtype=np.int64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ShapeError(f"features must be a non-empty (n, d) matrix, got {x.shape}")
        if y.shape != (x.shape[0],):
            raise ShapeError(f"labels must be shape ({x.shape[0]},), got {y.shape}")
        if not np.all(np.isfinite(x)):
            raise ShapeError("features contain non-finite entries")
        if np.any(y < 0):
            raise ShapeError("labels must be non-negative class indices")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def size(self) -> int:
        return self.features.shape[0]


def init_params(arch: Architecture, seed: int) -> ModelParameters:
    """Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)), zero biases."""
    rng = stream(seed, "init")
    layers = []
    for fan_in, fan_out in arch.layer_dims():
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        layers.append((weights, np.zeros(fan_out)))
    return ModelParameters(arch, tuple(layers))


def _check_batch(params: ModelParameters, batch: Batch) -> None:
    if batch.features.shape[1] != params.arch.d_in:
        raise ShapeError(
            f"batch has {batch.features.shape[1]} features, model expects {params.arch.d_in}"
        )
    if int(batch.labels.max()) >= params.arch.classes:
        raise ShapeError(
            f"label {int(batch.labels.max())} out of range for {params.arch.classes} classes"
        )


def _forward(params: ModelParameters, x: np.ndarray):
    """Returns (logits, hidden activations or None)."""
    if params.arch.kind == "linear":
        w, b = params.layers[0]
        return x @ w + b, None
    (w1, b1), (w2, b2) = params.layers
    hidden = np.tanh(x @ w1 + b1)
    return hidden @ w2 + b2, hidden


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def loss(params: ModelParameters, batch: Batch) -> float:
    """Mean softmax cross-entropy over the batch."""
    _check_batch(params, batch)
    logits, _ = _forward(params, batch.features)
    log_probs = _log_softmax(logits)
    n = batch.size
    return float(-np.mean(log_probs[np.arange(n), batch.labels]))


def gradient(params: ModelParameters, batch: Batch) -> GradientVector:
    """Analytic gradient of the mean cross-entropy, one segment per layer."""
    _check_batch(params, batch)
    x = batch.features
    n = batch.size
    logits, hidden = _forward(params, x)
    probs = np.exp(_log_softmax(logits))
    delta = probs
    delta[np.arange(n), batch.labels] -= 1.0
    delta /= n

    if params.arch.kind == "linear":
        grads = [(x.T @ delta, delta.sum(axis=0))]
    else:
        (_, _), (w2, _) = params.layers
        g_w2 = hidden.T @ delta
        g_b2 = delta.sum(axis=0)
        d_hidden = (delta @ w2.T) * (1.0 - hidden * hidden)
        g_w1 = x.T @ d_hidden
        g_b1 = d_hidden.sum(axis=0)
        grads = [(g_w1, g_b1), (g_w2, g_b2)]

    segments = tuple(
        (sid, np.concatenate([gw.ravel(), gb]))
        for sid, (gw, gb) in zip(params.arch.segment_ids, grads)
    )
    return GradientVector(segments)


def apply_update(params: ModelParameters, g: GradientVector, eta: float) -> ModelParameters:
    """Gradient step: params - eta * g."""
    if g.segment_ids != params.arch.segment_ids:
        raise LayoutError(
            f"gradient layout {g.segment_ids} does not match model {params.arch.segment_ids}"
        )
    layers = []
    for (w, b), sid in zip(params.layers, params.arch.segment_ids):
        flat = g.segment(sid)
        if flat.size != w.size + b.size:
            raise LayoutError(
                f"segment {sid!r} has {flat.size} entries, layer needs {w.size + b.size}"
            )
        dw = flat[: w.size].reshape(w.shape)
        db = flat[w.size :]
        layers.append((w - eta * dw, b - eta * db))
    return ModelParameters(params.arch, tuple(layers))


def accuracy(params: ModelParameters, batch: Batch) -> float:
    """Fraction of argmax-correct predictions; ties go to the lowest class."""
    _check_batch(params, batch)
    logits, _ = _forward(params, batch.features)
    predicted = np.argmax(logits, axis=1)
    return float(np.mean(predicted == batch.labels))
