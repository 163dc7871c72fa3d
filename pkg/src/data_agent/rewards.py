"""Per-sample training-aware rewards and their variance-adaptive combination."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .target_model import ForwardRecord

DEFAULT_EPSILON = 1e-8


@dataclass
class RewardBundle:
    diff: np.ndarray
    conf: np.ndarray
    weight_r: float
    composite: np.ndarray
    extras: dict[str, np.ndarray] = field(default_factory=dict)
    # per-channel weights actually used, in order diff, conf, *extras
    weights: dict[str, float] = field(default_factory=dict)
    epsilon: float = DEFAULT_EPSILON


def difficulty_reward(record: ForwardRecord) -> np.ndarray:
    return record.losses


def uncertainty_reward(record: ForwardRecord) -> np.ndarray:
    """Predictive entropy per row, with 0 log 0 taken as 0."""
    p = record.probs
    safe = np.where(p > 0, p, 1.0)
    return -(p * np.log(safe)).sum(axis=1)


def adaptive_weight(diff, conf, epsilon: float = DEFAULT_EPSILON) -> float:
    diff = np.asarray(diff, dtype=np.float64)
    conf = np.asarray(conf, dtype=np.float64)
    if diff.shape != conf.shape or diff.size == 0:
        raise ValueError(f"reward vectors must be equal non-empty length, got {diff.shape} and {conf.shape}")
    var_d, var_c = float(np.var(diff)), float(np.var(conf))
    if var_d < epsilon and var_c < epsilon:
        return 0.5
    return var_d / (var_d + var_c + epsilon)


def composite_reward(diff, conf, extras: Mapping[str, np.ndarray] | None = None,
                     epsilon: float = DEFAULT_EPSILON) -> RewardBundle:
    """Blend the reward channels.

    With only difficulty and uncertainty the blend is r*diff + (1-r)*conf. Extra
    channels get variance-proportional weights alongside the two base channels.
    """
    diff = np.asarray(diff, dtype=np.float64)
    conf = np.asarray(conf, dtype=np.float64)
    extras = {k: np.asarray(v, dtype=np.float64) for k, v in (extras or {}).items()}
    r = adaptive_weight(diff, conf, epsilon)
    for name, v in extras.items():
        if v.shape != diff.shape:
            raise ValueError(f"extra channel {name!r} has shape {v.shape}, expected {diff.shape}")

    if not extras:
        composite = r * diff + (1.0 - r) * conf
        weights = {"diff": r, "conf": 1.0 - r}
    else:
        channels = {"diff": diff, "conf": conf, **extras}
        variances = {k: float(np.var(v)) for k, v in channels.items()}
        if all(v < epsilon for v in variances.values()):
            weights = {k: 1.0 / len(channels) for k in channels}
        else:
            denom = sum(variances.values()) + epsilon
            weights = {k: v / denom for k, v in variances.items()}
        composite = sum(weights[k] * channels[k] for k in channels)
    return RewardBundle(diff, conf, r, composite, extras, weights, epsilon)


def normalize_composite(composite) -> np.ndarray:
    x = np.asarray(composite, dtype=np.float64)
    std = x.std()
    if std < 1e-12:
        return np.zeros_like(x)
    return (x - x.mean()) / std


def score_rewards(record: ForwardRecord, extras=None, epsilon: float = DEFAULT_EPSILON) -> RewardBundle:
    return composite_reward(difficulty_reward(record), uncertainty_reward(record), extras, epsilon)
