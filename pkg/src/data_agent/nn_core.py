"""Dense-network numerics shared by the trainee classifier and the selection agent.

Matrices are plain float64 numpy arrays of shape (rows, cols). Gradients are
derived by hand per layer; there is no autodiff graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PROB_FLOOR = 1e-12
ACTIVATIONS = ("identity", "relu", "tanh", "sigmoid")


class ShapeError(ValueError):
    pass


class ProtocolError(RuntimeError):
    """Raised when backward is called without a matching cached forward pass."""


@dataclass
class SgdConfig:
    learning_rate: float = 0.05
    momentum: float = 0.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"
    weight_grad: np.ndarray = field(default=None, repr=False)
    bias_grad: np.ndarray = field(default=None, repr=False)
    _input: np.ndarray | None = field(default=None, repr=False)
    _pre: np.ndarray | None = field(default=None, repr=False)
    _out: np.ndarray | None = field(default=None, repr=False)
    _w_vel: np.ndarray | None = field(default=None, repr=False)
    _b_vel: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 2 or self.bias.shape[0] != self.weight.shape[0]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} does not match weight rows {self.weight.shape}"
            )
        self.weight_grad = np.zeros_like(self.weight)
        self.bias_grad = np.zeros_like(self.bias)

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def params(self):
        return [self.weight, self.bias]

    def zero_grad(self):
        self.weight_grad[...] = 0.0
        self.bias_grad[...] = 0.0


def seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def seeded_init(shape: tuple[int, int], seed) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) matrix of shape (out, in).

    Uses numpy's PCG64 bit generator, so a given (shape, seed) reproduces
    bit-identically on any platform.
    """
    out_dim, fan_in = shape
    bound = 1.0 / np.sqrt(fan_in)
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(-bound, bound, size=(out_dim, fan_in))


def make_layer(in_dim: int, out_dim: int, activation: str, seed) -> DenseLayer:
    return DenseLayer(seeded_init((out_dim, in_dim), seed), np.zeros(out_dim), activation)


def _activate(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == "identity":
        return pre
    if activation == "relu":
        return np.maximum(pre, 0.0)
    if activation == "tanh":
        return np.tanh(pre)
    # split by sign so exp never overflows
    out = np.empty_like(pre)
    pos = pre >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-pre[pos]))
    e = np.exp(pre[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _activation_grad(pre: np.ndarray, out: np.ndarray, activation: str) -> np.ndarray:
    if activation == "identity":
        return np.ones_like(pre)
    if activation == "relu":
        return (pre > 0).astype(np.float64)
    if activation == "tanh":
        return 1.0 - out * out
    return out * (1.0 - out)


def dense_forward(layer: DenseLayer, inputs: np.ndarray, cache: bool = True) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != layer.in_features:
        raise ShapeError(
            f"input has {inputs.shape[-1] if inputs.ndim else 0} columns, "
            f"layer expects {layer.in_features}"
        )
    pre = inputs @ layer.weight.T + layer.bias
    out = _activate(pre, layer.activation)
    if cache:
        layer._input, layer._pre, layer._out = inputs, pre, out
    return out


def network_forward(layers: Sequence[DenseLayer], inputs: np.ndarray, cache: bool = True) -> np.ndarray:
    h = inputs
    for layer in layers:
        h = dense_forward(layer, h, cache=cache)
    return h


def backward(layers: Sequence[DenseLayer], grad_output: np.ndarray) -> np.ndarray:
    """Backpropagate ``grad_output`` (d loss / d network output) through ``layers``.

    Fills each layer's gradient buffers (overwriting them) and returns the
    gradient with respect to the network input. The caller folds any batch
    averaging into ``grad_output``. Caches are consumed, so a second call
    without a fresh forward raises ProtocolError.
    """
    grad = np.asarray(grad_output, dtype=np.float64)
    for layer in reversed(layers):
        if layer._input is None:
            raise ProtocolError("backward called before forward (no cached activations)")
        if grad.shape != layer._pre.shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match output {layer._pre.shape}")
        dpre = grad * _activation_grad(layer._pre, layer._out, layer.activation)
        layer.weight_grad[...] = dpre.T @ layer._input
        layer.bias_grad[...] = dpre.sum(axis=0)
        grad = dpre @ layer.weight
        layer._input = layer._pre = layer._out = None
    return grad


def sgd_step(layers: Sequence[DenseLayer], config: SgdConfig) -> None:
    lr, mom = config.learning_rate, config.momentum
    for layer in layers:
        if mom > 0.0:
            if layer._w_vel is None:
                layer._w_vel = np.zeros_like(layer.weight)
                layer._b_vel = np.zeros_like(layer.bias)
            layer._w_vel *= mom
            layer._w_vel += layer.weight_grad
            layer._b_vel *= mom
            layer._b_vel += layer.bias_grad
            layer.weight -= lr * layer._w_vel
            layer.bias -= lr * layer._b_vel
        else:
            layer.weight -= lr * layer.weight_grad
            layer.bias -= lr * layer.bias_grad
        layer.zero_grad()


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_labels(labels, n_rows: int, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n_rows,):
        raise ShapeError(f"expected {n_rows} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        bad = int(np.flatnonzero((labels < 0) | (labels >= n_classes))[0])
        raise ValueError(f"label {labels[bad]} at row {bad} outside [0, {n_classes})")
    return labels.astype(np.int64)


def cross_entropy_per_row(probs: np.ndarray, labels) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    labels = _check_labels(labels, probs.shape[0], probs.shape[1])
    picked = probs[np.arange(probs.shape[0]), labels]
    return -np.log(np.maximum(picked, PROB_FLOOR))


def softmax_ce_logit_grad(probs: np.ndarray, labels) -> np.ndarray:
    """Per-row gradient of -log softmax(z)[y] with respect to z: p - onehot(y)."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = _check_labels(labels, probs.shape[0], probs.shape[1])
    grad = probs.copy()
    grad[np.arange(probs.shape[0]), labels] -= 1.0
    return grad


def parameter_vector(layers: Sequence[DenseLayer]) -> np.ndarray:
    return np.concatenate([p.ravel() for layer in layers for p in layer.params()])


def gradient_vector(layers: Sequence[DenseLayer]) -> np.ndarray:
    return np.concatenate(
        [g.ravel() for layer in layers for g in (layer.weight_grad, layer.bias_grad)]
    )
