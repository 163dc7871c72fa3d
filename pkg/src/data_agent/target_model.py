"""The trainee classifier: a relu trunk (feature extractor) plus a linear head."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .nn_core import (
    DenseLayer,
    SgdConfig,
    ShapeError,
    backward,
    cross_entropy_per_row,
    dense_forward,
    make_layer,
    network_forward,
    parameter_vector,
    seed_sequence,
    sgd_step,
    softmax_ce_logit_grad,
    softmax_rows,
)


@dataclass
class ForwardRecord:
    features: np.ndarray  # (N, D) agent states
    probs: np.ndarray  # (N, C)
    losses: np.ndarray  # (N,)
    sample_ids: np.ndarray  # (N,)


class TargetModel:
    def __init__(self, trunk: Sequence[DenseLayer], head: DenseLayer):
        trunk = list(trunk)
        width = trunk[-1].out_features if trunk else None
        if width is not None and width != head.in_features:
            raise ShapeError(f"trunk output width {width} != head input width {head.in_features}")
        if head.out_features < 2:
            raise ValueError("class_count must be >= 2")
        self.trunk = trunk
        self.head = head

    @classmethod
    def build(cls, in_dim: int, hidden_dims: Sequence[int], class_count: int, seed: int) -> "TargetModel":
        ss = seed_sequence(seed)
        seeds = ss.spawn(len(hidden_dims) + 1)
        trunk, prev = [], in_dim
        for width, s in zip(hidden_dims, seeds):
            trunk.append(make_layer(prev, width, "relu", s))
            prev = width
        return cls(trunk, make_layer(prev, class_count, "identity", seeds[-1]))

    @property
    def class_count(self) -> int:
        return self.head.out_features

    @property
    def in_dim(self) -> int:
        return self.trunk[0].in_features if self.trunk else self.head.in_features

    @property
    def feature_dim(self) -> int:
        return self.head.in_features

    @property
    def layers(self) -> list[DenseLayer]:
        return [*self.trunk, self.head]

    def checksum(self) -> bytes:
        return parameter_vector(self.layers).tobytes()

    def logits(self, features: np.ndarray) -> np.ndarray:
        return network_forward(self.layers, features, cache=False)


def forward_pool(model: TargetModel, features: np.ndarray, labels, sample_ids=None) -> ForwardRecord:
    """Score every pool sample without touching parameters or caches."""
    feats = network_forward(model.trunk, features, cache=False)
    probs = softmax_rows(dense_forward(model.head, feats, cache=False))
    losses = cross_entropy_per_row(probs, labels)
    if sample_ids is None:
        sample_ids = np.arange(len(losses))
    return ForwardRecord(feats, probs, losses, np.asarray(sample_ids))


def train_step(model: TargetModel, features: np.ndarray, labels, sgd: SgdConfig) -> float:
    """One SGD step on exactly this batch; returns the pre-update mean loss."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("train_step needs a non-empty batch")
    probs = softmax_rows(network_forward(model.layers, features))
    loss = float(cross_entropy_per_row(probs, labels).mean())
    backward(model.layers, softmax_ce_logit_grad(probs, labels) / len(labels))
    sgd_step(model.layers, sgd)
    return loss


def train_epoch(model: TargetModel, features, labels, indices, batch_size: int,
                sgd: SgdConfig, rng: np.random.Generator, on_batch=None) -> float:
    """Seeded-shuffle minibatch pass over ``indices``; returns the sample-weighted mean loss.

    ``on_batch`` receives each batch's index array before the step (audit hook).
    """
    order = np.asarray(indices)[rng.permutation(len(indices))]
    total = 0.0
    for start in range(0, len(order), batch_size):
        batch = order[start:start + batch_size]
        if on_batch is not None:
            on_batch(batch)
        total += train_step(model, features[batch], labels[batch], sgd) * len(batch)
    return total / len(order)


def evaluate(model: TargetModel, features: np.ndarray, labels) -> float:
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("evaluation set is empty")
    # np.argmax returns the first maximal index, i.e. ties go to the lower class
    pred = np.argmax(model.logits(features), axis=1)
    return float(np.mean(pred == labels))
