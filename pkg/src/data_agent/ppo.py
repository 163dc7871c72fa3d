"""Actor-critic selection policy trained with clipped PPO and GAE.

The policy emits one continuous selection weight per sample: a Gaussian with a
sigmoid-squashed mean and a single learnable log-std, clamped to [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .nn_core import (
    DenseLayer,
    SgdConfig,
    ShapeError,
    backward,
    dense_forward,
    make_layer,
    network_forward,
    parameter_vector,
    seed_sequence,
    sgd_step,
)

LOG_STD_FLOOR = -5.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    update_epochs: int = 4
    minibatch: int = 256
    agent_lr: float = 3e-4
    value_coeff: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ValueError("gamma and lambda must lie in [0, 1]")
        if self.clip_eps <= 0 or self.agent_lr <= 0 or self.value_coeff <= 0:
            raise ValueError("clip_eps, agent_lr and value_coeff must be positive")
        if self.update_epochs < 1 or self.minibatch < 1:
            raise ValueError("update_epochs and minibatch must be >= 1")


@dataclass
class Transition:
    state: np.ndarray
    action: float
    logprob_old: float
    reward: float
    value_old: float
    # pre-clamp Gaussian draw; the PPO ratio is evaluated here
    raw_action: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.action <= 1.0:
            raise ValueError(f"action {self.action} outside [0, 1]")
        if self.raw_action is None:
            self.raw_action = self.action


@dataclass
class Trajectory:
    sample_id: int
    transitions: list[Transition] = field(default_factory=list)

    def __post_init__(self):
        if len(self.transitions) < 1:
            raise ValueError("a trajectory needs at least one transition")


class ActorCritic:
    def __init__(self, state_dim: int, hidden: int = 64, logstd_init: float = -1.0, seed=0):
        seeds = seed_sequence(seed).spawn(4)
        self.trunk = [
            make_layer(state_dim, hidden, "tanh", seeds[0]),
            make_layer(hidden, hidden, "tanh", seeds[1]),
        ]
        self.actor_head = make_layer(hidden, 1, "sigmoid", seeds[2])
        self.critic_head = make_layer(hidden, 1, "identity", seeds[3])
        self.log_std = float(logstd_init)

    @property
    def state_dim(self) -> int:
        return self.trunk[0].in_features

    @property
    def layers(self) -> list[DenseLayer]:
        return [*self.trunk, self.actor_head, self.critic_head]

    @property
    def std(self) -> float:
        return math.exp(max(self.log_std, LOG_STD_FLOOR))

    def checksum(self) -> bytes:
        return parameter_vector(self.layers).tobytes() + np.float64(self.log_std).tobytes()


def policy_forward(agent: ActorCritic, states: np.ndarray):
    """Return (mean, std, values) for a batch of states; read-only."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[1] != agent.state_dim:
        raise ShapeError(f"states have shape {states.shape}, agent expects width {agent.state_dim}")
    h = network_forward(agent.trunk, states, cache=False)
    mean = dense_forward(agent.actor_head, h, cache=False)[:, 0]
    values = dense_forward(agent.critic_head, h, cache=False)[:, 0]
    return mean, agent.std, values


def gaussian_logprob(x, mean, std):
    z = (np.asarray(x) - np.asarray(mean)) / std
    return -0.5 * z * z - math.log(std) - _HALF_LOG_2PI


def sample_action(mean, std: float, rng=None, deterministic: bool = False):
    """Draw clamped Gaussian actions.

    Returns (action, logprob, raw) where ``raw`` is the pre-clamp draw and
    ``logprob`` its Gaussian log-density. In deterministic mode the action is
    the mean itself.
    """
    mean = np.asarray(mean, dtype=np.float64)
    if deterministic:
        raw = mean.copy()
    else:
        if not isinstance(rng, np.random.Generator):
            rng = np.random.Generator(np.random.PCG64(rng))
        raw = mean + std * rng.standard_normal(mean.shape)
    action = np.clip(raw, 0.0, 1.0)
    logprob = gaussian_logprob(raw, mean, std)
    if mean.ndim == 0:
        return float(action), float(logprob), float(raw)
    return action, logprob, raw


def td_residual(reward, value_s, value_s_next, gamma: float):
    return reward + gamma * value_s_next - value_s


def gae(rewards, values, gamma: float, lam: float) -> np.ndarray:
    """Generalized advantage estimates by backward recursion.

    ``values`` carries one more entry than ``rewards`` along axis 0 (the
    bootstrap value, 0 at an episode end). Trailing axes are independent
    sequences, so a (T, N) reward matrix gives N trajectories at once.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != rewards.shape[0] + 1 or values.shape[1:] != rewards.shape[1:]:
        raise ValueError(
            f"values must have exactly one more step than rewards: {values.shape} vs {rewards.shape}"
        )
    deltas = td_residual(rewards, values[:-1], values[1:], gamma)
    adv = np.zeros_like(deltas)
    running = np.zeros(deltas.shape[1:])
    for t in range(deltas.shape[0] - 1, -1, -1):
        running = deltas[t] + gamma * lam * running
        adv[t] = running
    return adv


def clipped_surrogate(logprob_new, logprob_old, advantage, clip_eps: float) -> np.ndarray:
    ratio = np.exp(np.asarray(logprob_new) - np.asarray(logprob_old))
    adv = np.asarray(advantage)
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)


def actor_loss(logprob_new, logprob_old, advantage, clip_eps: float) -> float:
    return -float(np.mean(clipped_surrogate(logprob_new, logprob_old, advantage, clip_eps)))


def critic_loss(value_new, advantage, value_old) -> float:
    residual = np.asarray(value_new) - (np.asarray(advantage) + np.asarray(value_old))
    return float(np.mean(residual * residual))


@dataclass
class UpdateStats:
    actor_loss: float
    critic_loss: float
    mean_ratio: float
    forwards: int


def _normalize_advantages(adv: np.ndarray) -> np.ndarray:
    if adv.size < 2:
        return adv
    std = adv.std()
    if std < 1e-12:
        return np.zeros_like(adv)
    return (adv - adv.mean()) / std


def optimize(agent: ActorCritic, states, raw_actions, logprob_old, advantages, returns,
             config: PpoConfig, seed) -> UpdateStats:
    """Minibatch PPO passes over flat transition arrays.

    ``advantages`` are used as given (already normalized by the caller);
    ``returns`` are the critic regression targets.
    """
    n = len(advantages)
    rng = np.random.Generator(np.random.PCG64(seed))
    sgd = SgdConfig(config.agent_lr)
    eps = config.clip_eps
    a_losses, c_losses, ratios = [], [], []
    for _ in range(config.update_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch):
            idx = order[start:start + config.minibatch]
            m = len(idx)
            h = network_forward(agent.trunk, states[idx])
            mean = dense_forward(agent.actor_head, h)[:, 0]
            value = dense_forward(agent.critic_head, h)[:, 0]
            std = agent.std
            u = raw_actions[idx]
            logp = gaussian_logprob(u, mean, std)
            ratio = np.exp(logp - logprob_old[idx])
            adv = advantages[idx]
            unclipped = ratio * adv
            clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
            surrogate = np.minimum(unclipped, clipped)
            resid = value - returns[idx]

            # d(-mean surrogate)/d logp; zero where the clipped branch is the minimum
            g_logp = -np.where(unclipped <= clipped, unclipped, 0.0) / m
            g_mean = g_logp * (u - mean) / (std * std)
            g_value = config.value_coeff * 2.0 * resid / m
            dh = backward([agent.actor_head], g_mean[:, None])
            dh = dh + backward([agent.critic_head], g_value[:, None])
            backward(agent.trunk, dh)
            if agent.log_std > LOG_STD_FLOOR:
                z = (u - mean) / std
                g_logstd = float(np.sum(g_logp * (z * z - 1.0)))
                agent.log_std = max(agent.log_std - config.agent_lr * g_logstd, LOG_STD_FLOOR)
            sgd_step(agent.layers, sgd)

            a_losses.append(-surrogate.mean())
            c_losses.append(np.mean(resid * resid))
            ratios.append(ratio.mean())
    forwards = n * config.update_epochs
    return UpdateStats(float(np.mean(a_losses)), float(np.mean(c_losses)), float(np.mean(ratios)), forwards)


def ppo_update(agent: ActorCritic, trajectories: Sequence[Trajectory], config: PpoConfig, seed) -> UpdateStats:
    """GAE per trajectory (terminal bootstrap 0), batch-normalized advantages, clipped PPO."""
    if not trajectories:
        raise ValueError("ppo_update needs at least one trajectory")
    states, raw, logp, advs, rets = [], [], [], [], []
    for traj in trajectories:
        rewards = np.array([t.reward for t in traj.transitions])
        values = np.array([t.value_old for t in traj.transitions] + [0.0])
        adv = gae(rewards, values, config.gamma, config.lam)
        advs.append(adv)
        rets.append(adv + values[:-1])
        states.extend(t.state for t in traj.transitions)
        raw.extend(t.raw_action for t in traj.transitions)
        logp.extend(t.logprob_old for t in traj.transitions)
    adv = np.concatenate(advs)
    return optimize(agent, np.asarray(states, dtype=np.float64), np.asarray(raw, dtype=np.float64),
                    np.asarray(logp, dtype=np.float64), _normalize_advantages(adv),
                    np.concatenate(rets), config, seed)


def ppo_update_windows(agent: ActorCritic, states, raw_actions, logprob_old, rewards, values_old,
                       config: PpoConfig, seed) -> UpdateStats:
    """Vectorized ppo_update for N equal-length trajectories stored as (W, N, ...) arrays."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values_old = np.asarray(values_old, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("ppo_update needs at least one transition")
    boot = np.concatenate([values_old, np.zeros((1,) + values_old.shape[1:])], axis=0)
    adv = gae(rewards, boot, config.gamma, config.lam)
    returns = adv + values_old
    d = states.shape[-1]
    # flatten sample-major so the layout matches ppo_update on per-sample trajectories
    flat = lambda a: np.swapaxes(a, 0, 1).reshape(-1)  # noqa: E731
    return optimize(agent, np.swapaxes(states, 0, 1).reshape(-1, d), flat(raw_actions),
                    flat(logprob_old), _normalize_advantages(flat(adv)), flat(returns), config, seed)
