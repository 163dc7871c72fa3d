"""Closed-loop training: score the pool, reward, act, select, train, update the agent."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .nn_core import SgdConfig
from .ppo import ActorCritic, PpoConfig, UpdateStats, policy_forward, ppo_update_windows, sample_action
from .rewards import DEFAULT_EPSILON, RewardBundle, normalize_composite, score_rewards
from .target_model import ForwardRecord, TargetModel, evaluate, forward_pool, train_epoch

STRATEGIES = ("full", "random_epoch", "static_loss", "agent")


@dataclass
class LoopConfig:
    ratio: float = 0.5
    epochs: int = 30
    warmup_epochs: int = 1
    score_period: int = 1
    horizon_w: int = 4
    # None means "same as horizon_w"; 0 disables agent updates
    agent_update_period: int | None = None
    seed: int = 0
    selection: str = "topk"  # or "proportional"

    def __post_init__(self):
        if not 0.0 < self.ratio <= 1.0:
            raise ValueError(f"ratio must be in (0, 1], got {self.ratio}")
        # warmup_epochs == epochs is allowed and never invokes the agent
        if self.epochs < 1 or not 0 <= self.warmup_epochs <= self.epochs:
            raise ValueError("need epochs >= 1 and 0 <= warmup_epochs <= epochs")
        if self.score_period < 1 or self.horizon_w < 1:
            raise ValueError("score_period and horizon_w must be >= 1")
        if self.agent_update_period is None:
            self.agent_update_period = self.horizon_w
        if self.agent_update_period < 0:
            raise ValueError("agent_update_period must be >= 0")
        if self.selection not in ("topk", "proportional"):
            raise ValueError(f"unknown selection mode {self.selection!r}")


@dataclass
class ModelConfig:
    hidden_dims: tuple[int, ...] = (64, 64)
    lr: float = 0.05
    batch: int = 64
    momentum: float = 0.0


@dataclass
class AgentConfig:
    hidden: int = 64
    logstd_init: float = -1.0
    ppo: PpoConfig = field(default_factory=PpoConfig)


@dataclass
class RewardConfig:
    epsilon: float = DEFAULT_EPSILON
    use_consistency: bool = False


@dataclass
class SelectionDecision:
    epoch: int
    selected_ids: np.ndarray
    actions: np.ndarray | None
    weight_r: float


@dataclass
class MetricsRecord:
    epoch: int
    selected_count: int
    weight_r: float
    mean_reward: float
    train_loss: float
    test_accuracy: float
    train_forwards: int
    score_forwards: int
    agent_forwards: int
    wallclock_ms: float


@dataclass
class ScoreResult:
    record: ForwardRecord
    rewards: RewardBundle
    actions: np.ndarray | None
    logprobs: np.ndarray | None
    values: np.ndarray | None
    raw_actions: np.ndarray | None


def select_top(actions, ratio: float) -> np.ndarray:
    """Indices of the ceil(ratio * N) largest actions, ties to the lower index, ascending."""
    actions = np.asarray(actions, dtype=np.float64)
    n = len(actions)
    if n == 0:
        raise ValueError("cannot select from an empty pool")
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    k = subset_size(n, ratio)
    # stable sort on -actions keeps lower indices first among equal values
    order = np.argsort(-actions, kind="stable")
    return np.sort(order[:k])


def subset_size(n: int, ratio: float) -> int:
    # guard against ratio*n landing a hair above an integer, e.g. 0.7 * 10
    return min(n, int(math.ceil(round(ratio * n, 9))))


def select_proportional(actions, ratio: float, rng: np.random.Generator) -> np.ndarray:
    actions = np.asarray(actions, dtype=np.float64)
    k = subset_size(len(actions), ratio)
    w = actions + 1e-12
    return np.sort(rng.choice(len(actions), size=k, replace=False, p=w / w.sum()))


def baseline_select(strategy: str, ratio: float, n: int, rng: np.random.Generator | None = None,
                    losses=None) -> np.ndarray:
    if n == 0:
        raise ValueError("cannot select from an empty pool")
    if strategy == "full":
        return np.arange(n)
    if strategy == "random_epoch":
        return np.sort(rng.choice(n, size=subset_size(n, ratio), replace=False))
    if strategy == "static_loss":
        return select_top(losses, ratio)
    raise ValueError(f"unknown baseline strategy {strategy!r}")


class _Streams:
    """Independent seeded generators so enabling one component never perturbs another."""

    def __init__(self, seed: int):
        model, agent, shuffle, action, ppo, select = np.random.SeedSequence(seed).spawn(6)
        self.model_seed = model
        self.agent_seed = agent
        self.shuffle = np.random.Generator(np.random.PCG64(shuffle))
        self.action = np.random.Generator(np.random.PCG64(action))
        self.ppo = np.random.Generator(np.random.PCG64(ppo))
        self.select = np.random.Generator(np.random.PCG64(select))


@dataclass
class RunState:
    model: TargetModel
    agent: ActorCritic | None
    streams: _Streams
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    extras: dict[str, np.ndarray]
    score: ScoreResult | None = None
    rounds: int = 0
    window: list = field(default_factory=list)
    train_forwards: int = 0
    score_forwards: int = 0
    agent_forwards: int = 0
    decisions: list[SelectionDecision] = field(default_factory=list)
    trained_ids: list[np.ndarray] = field(default_factory=list)
    updates: list[UpdateStats] = field(default_factory=list)


def score_pool(state: RunState, reward_cfg: RewardConfig, act: bool = True) -> ScoreResult:
    """One trainee forward over the pool, rewards, and (if ``act``) one agent forward."""
    record = forward_pool(state.model, state.train_x, state.train_y)
    bundle = score_rewards(record, state.extras, reward_cfg.epsilon)
    n = len(record.losses)
    state.score_forwards += n
    actions = logprobs = values = raw = None
    if act:
        if state.agent is None:
            raise ValueError("score_pool(act=True) needs an agent")
        if state.agent.state_dim != record.features.shape[1]:
            raise ValueError(
                f"agent state width {state.agent.state_dim} != trainee feature width {record.features.shape[1]}"
            )
        mean, std, values = policy_forward(state.agent, record.features)
        actions, logprobs, raw = sample_action(mean, std, state.streams.action)
        state.agent_forwards += n
    result = ScoreResult(record, bundle, actions, logprobs, values, raw)
    state.score = result
    state.rounds += 1
    return result


def transition_rewards(actions, composite) -> np.ndarray:
    """Agent reward per sample: selection weight times the z-scored composite reward.

    The composite alone does not depend on the action, so it would carry no
    policy-gradient signal; weighting by the action pays the agent for putting
    weight on samples the reward engine rates highly.
    """
    return np.asarray(actions) * normalize_composite(composite)


def _flush_windows(state: RunState, agent_cfg: AgentConfig, w: int) -> None:
    while len(state.window) >= w:
        rounds, state.window = state.window[:w], state.window[w:]
        stack = lambda key: np.stack([r[key] for r in rounds])  # noqa: E731
        seed = int(state.streams.ppo.integers(2**63))
        stats = ppo_update_windows(
            state.agent, stack("states"), stack("raw"), stack("logp"), stack("reward"), stack("value"),
            agent_cfg.ppo, seed,
        )
        state.agent_forwards += stats.forwards
        state.updates.append(stats)


def run_epoch(state: RunState, epoch: int, strategy: str, loop: LoopConfig, model_cfg: ModelConfig,
              agent_cfg: AgentConfig, scored_now: bool) -> MetricsRecord:
    t0 = time.perf_counter()
    n = len(state.train_y)
    score = state.score
    actions = None
    if epoch < loop.warmup_epochs or strategy == "full":
        selected = np.arange(n)
    elif strategy == "agent":
        actions = score.actions
        if loop.selection == "topk":
            selected = select_top(actions, loop.ratio)
        else:
            selected = select_proportional(actions, loop.ratio, state.streams.select)
    elif strategy == "static_loss":
        selected = baseline_select("static_loss", loop.ratio, n, losses=score.record.losses)
    else:
        selected = baseline_select(strategy, loop.ratio, n, rng=state.streams.select)
    weight_r = score.rewards.weight_r if score is not None else float("nan")
    mean_reward = float(np.mean(score.rewards.composite)) if score is not None else float("nan")
    state.decisions.append(SelectionDecision(epoch, selected, actions, weight_r))

    sgd = SgdConfig(model_cfg.lr, model_cfg.momentum)
    trained = []
    loss = train_epoch(state.model, state.train_x, state.train_y, selected, model_cfg.batch, sgd,
                       state.streams.shuffle, trained.append)
    state.trained_ids.append(np.concatenate(trained))
    state.train_forwards += len(selected)

    if strategy == "agent" and scored_now and epoch >= loop.warmup_epochs:
        state.window.append({
            "states": score.record.features,
            "raw": score.raw_actions,
            "logp": score.logprobs,
            "reward": transition_rewards(score.actions, score.rewards.composite),
            "value": score.values,
        })
        period = loop.agent_update_period
        if period and state.rounds % period == 0:
            _flush_windows(state, agent_cfg, loop.horizon_w)
        elif not period:
            state.window.clear()

    acc = evaluate(state.model, state.test_x, state.test_y)
    return MetricsRecord(epoch, len(selected), weight_r, mean_reward, loss, acc, state.train_forwards,
                         state.score_forwards, state.agent_forwards, (time.perf_counter() - t0) * 1e3)


@dataclass
class RunResult:
    metrics: list[MetricsRecord]
    state: RunState


def init_state(dataset, strategy: str, loop: LoopConfig, model_cfg: ModelConfig, agent_cfg: AgentConfig,
               reward_cfg: RewardConfig) -> RunState:
    streams = _Streams(loop.seed)
    train_x, train_y = dataset.train()
    test_x, test_y = dataset.test()
    model = TargetModel.build(dataset.dim, model_cfg.hidden_dims, dataset.class_count, streams.model_seed)
    agent = None
    if strategy == "agent":
        agent = ActorCritic(model.feature_dim, agent_cfg.hidden, agent_cfg.logstd_init, streams.agent_seed)
    extras = {}
    if reward_cfg.use_consistency and dataset.consistency is not None:
        extras["consistency"] = dataset.consistency[dataset.train_ids]
    return RunState(model, agent, streams, train_x, train_y, test_x, test_y, extras)


def run_training(dataset, strategy: str = "agent", loop: LoopConfig | None = None,
                 model_cfg: ModelConfig | None = None, agent_cfg: AgentConfig | None = None,
                 reward_cfg: RewardConfig | None = None,
                 on_epoch: Callable[[MetricsRecord, RunState], None] | None = None) -> RunResult:
    """Warmup on the full pool, then the closed selection loop; evaluates every epoch."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    loop = loop or LoopConfig()
    model_cfg = model_cfg or ModelConfig()
    agent_cfg = agent_cfg or AgentConfig()
    reward_cfg = reward_cfg or RewardConfig()
    state = init_state(dataset, strategy, loop, model_cfg, agent_cfg, reward_cfg)
    needs_scores = strategy in ("agent", "static_loss")
    metrics = []
    for epoch in range(loop.epochs):
        scored_now = False
        if needs_scores and epoch >= loop.warmup_epochs and (epoch - loop.warmup_epochs) % loop.score_period == 0:
            score_pool(state, reward_cfg, act=strategy == "agent")
            scored_now = True
        rec = run_epoch(state, epoch, strategy, loop, model_cfg, agent_cfg, scored_now)
        metrics.append(rec)
        if on_epoch is not None:
            on_epoch(rec, state)
    return RunResult(metrics, state)


def scoring_rounds(epochs: int, warmup: int, period: int) -> int:
    return math.ceil(max(epochs - warmup, 0) / period)
