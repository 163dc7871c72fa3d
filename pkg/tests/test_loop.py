import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from data_agent.data import MixtureSpec, NoiseSpec, gen_mixture, inject_label_noise
from data_agent.loop import (
    AgentConfig,
    LoopConfig,
    ModelConfig,
    RewardConfig,
    baseline_select,
    init_state,
    run_training,
    score_pool,
    scoring_rounds,
    select_proportional,
    select_top,
    subset_size,
    transition_rewards,
)
from data_agent.nn_core import SgdConfig
from data_agent.ppo import PpoConfig
from data_agent.rewards import normalize_composite
from data_agent.target_model import TargetModel, evaluate, train_epoch

PROPS = settings(max_examples=100, deadline=None)
SMALL_MODEL = ModelConfig(hidden_dims=(8,), lr=0.05, batch=16)
SMALL_AGENT = AgentConfig(hidden=8, ppo=PpoConfig(agent_lr=0.01, minibatch=64))


@pytest.fixture(scope="module")
def tiny():
    spec = MixtureSpec([[[-2.0, 0.0]], [[2.0, 0.0]], [[0.0, 2.5]]], 0.8, 50, seed=1, test_fraction=0.2)
    return gen_mixture(spec)


def test_select_top_examples():
    assert select_top([0.9, 0.1, 0.5, 0.5], 0.5).tolist() == [0, 2]
    assert select_top([0.3, 0.2, 0.1], 1.0).tolist() == [0, 1, 2]
    assert select_top(np.full(7, 0.4), 0.5).tolist() == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        select_top([], 0.5)
    with pytest.raises(ValueError):
        select_top([0.1], 0.0)


def test_subset_size_rounding_guard():
    assert subset_size(10, 0.7) == 7
    assert subset_size(3, 2 / 3) == 2
    assert subset_size(8000, 0.3) == 2400


@PROPS
@given(st.lists(st.floats(0, 1), min_size=1, max_size=60), st.floats(0.01, 1.0))
def test_select_top_invariants(actions, ratio):
    sel = select_top(actions, ratio)
    a = np.asarray(actions)
    assert len(sel) == math.ceil(round(ratio * len(a), 9))
    assert len(set(sel.tolist())) == len(sel) and np.all(np.diff(sel) > 0)
    rest = np.setdiff1d(np.arange(len(a)), sel)
    if len(rest):
        # nothing left out beats anything kept, and ties favor lower indices
        assert a[rest].max() <= a[sel].min()
        boundary = a[sel].min()
        assert all(i > sel[a[sel] == boundary].max() for i in rest[a[rest] == boundary])


def test_baseline_examples():
    rng = np.random.default_rng(0)
    assert baseline_select("full", 0.3, 5).tolist() == [0, 1, 2, 3, 4]
    assert baseline_select("static_loss", 2 / 3, 3, losses=[0.1, 3.0, 2.0]).tolist() == [1, 2]
    a = baseline_select("random_epoch", 0.5, 20, np.random.default_rng(4))
    b = baseline_select("random_epoch", 0.5, 20, np.random.default_rng(4))
    c = baseline_select("random_epoch", 0.5, 20, rng)
    d = baseline_select("random_epoch", 0.5, 20, rng)
    assert a.tolist() == b.tolist() and c.tolist() != d.tolist() and len(a) == 10
    with pytest.raises(ValueError):
        baseline_select("agent", 0.5, 3)


def test_proportional_selection_size_and_uniqueness():
    sel = select_proportional(np.linspace(0, 1, 30), 0.4, np.random.default_rng(0))
    assert len(sel) == 12 and len(set(sel.tolist())) == 12


def test_loop_config_validation():
    with pytest.raises(ValueError):
        LoopConfig(ratio=0.0)
    with pytest.raises(ValueError):
        LoopConfig(epochs=3, warmup_epochs=4)
    assert LoopConfig(horizon_w=3).agent_update_period == 3
    assert LoopConfig(agent_update_period=0).agent_update_period == 0


def test_transition_rewards_weight_normalized_composite():
    comp = np.array([1.0, 2.0, 3.0])
    acts = np.array([0.5, 1.0, 0.0])
    assert np.allclose(transition_rewards(acts, comp), acts * normalize_composite(comp))


def test_score_pool_read_only_and_aligned(tiny):
    st_ = init_state(tiny, "agent", LoopConfig(seed=0), SMALL_MODEL, SMALL_AGENT, RewardConfig())
    m, a = st_.model.checksum(), st_.agent.checksum()
    res = score_pool(st_, RewardConfig())
    n = len(st_.train_y)
    assert st_.model.checksum() == m and st_.agent.checksum() == a
    for vec in (res.record.losses, res.rewards.diff, res.rewards.conf, res.rewards.composite,
                res.actions, res.logprobs, res.values):
        assert len(vec) == n
    assert st_.score_forwards == n and st_.agent_forwards == n
    # independent recomputation of both reward channels from the record
    p = res.record.probs
    ent = -np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1)), 0), axis=1)
    loss = -np.log(np.maximum(p[np.arange(n), st_.train_y], 1e-12))
    assert np.allclose(res.rewards.conf, ent, atol=1e-9) and np.allclose(res.rewards.diff, loss, atol=1e-9)
    vd, vc = loss.var(), ent.var()
    assert res.rewards.weight_r == pytest.approx(vd / (vd + vc + 1e-8), abs=1e-9)


def test_score_pool_dimension_mismatch(tiny):
    st_ = init_state(tiny, "agent", LoopConfig(), SMALL_MODEL, SMALL_AGENT, RewardConfig())
    from data_agent.ppo import ActorCritic
    st_.agent = ActorCritic(5, 4, seed=0)
    with pytest.raises(ValueError):
        score_pool(st_, RewardConfig())


def vanilla(dataset, loop, model_cfg):
    """Plain full-data training with the loop's seed streams, written independently of run_training."""
    model_ss, _, shuffle_ss, *_ = np.random.SeedSequence(loop.seed).spawn(6)
    x, y = dataset.train()
    tx, ty = dataset.test()
    model = TargetModel.build(dataset.dim, model_cfg.hidden_dims, dataset.class_count, model_ss)
    rng = np.random.Generator(np.random.PCG64(shuffle_ss))
    out = []
    for _ in range(loop.epochs):
        loss = train_epoch(model, x, y, np.arange(len(y)), model_cfg.batch, SgdConfig(model_cfg.lr), rng)
        out.append((loss, evaluate(model, tx, ty)))
    return out


@pytest.mark.parametrize("strategy", ["agent", "static_loss", "random_epoch"])
def test_ratio_one_matches_vanilla_training(tiny, strategy):
    loop = LoopConfig(ratio=1.0, epochs=4, agent_update_period=0, seed=3)
    got = run_training(tiny, strategy, loop, SMALL_MODEL, SMALL_AGENT)
    full = run_training(tiny, "full", LoopConfig(ratio=1.0, epochs=4, seed=3), SMALL_MODEL, SMALL_AGENT)
    want = vanilla(tiny, loop, SMALL_MODEL)
    assert [(m.train_loss, m.test_accuracy) for m in got.metrics] == want
    assert [(m.train_loss, m.test_accuracy) for m in full.metrics] == want


def test_warmup_trains_on_full_pool_and_never_acts(tiny):
    res = run_training(tiny, "agent", LoopConfig(ratio=0.3, epochs=3, warmup_epochs=3), SMALL_MODEL, SMALL_AGENT)
    n = len(tiny.train_ids)
    assert all(m.selected_count == n for m in res.metrics)
    assert res.metrics[-1].agent_forwards == 0 and res.metrics[-1].score_forwards == 0


def test_same_seed_identical_metrics(tiny):
    loop = LoopConfig(ratio=0.4, epochs=6, horizon_w=2, seed=9)
    a = run_training(tiny, "agent", loop, SMALL_MODEL, SMALL_AGENT)
    b = run_training(tiny, "agent", LoopConfig(ratio=0.4, epochs=6, horizon_w=2, seed=9), SMALL_MODEL, SMALL_AGENT)
    # repr so the nan weight_r of the warmup epoch compares equal
    strip = lambda ms: [repr((m.epoch, m.train_loss, m.test_accuracy, m.weight_r, m.train_forwards,  # noqa: E731
                              m.score_forwards, m.agent_forwards)) for m in ms]
    assert strip(a.metrics) == strip(b.metrics)
    assert a.state.agent.checksum() == b.state.agent.checksum()
    assert len(a.state.updates) == 2


@pytest.mark.parametrize("epochs,warmup,period", [(7, 1, 1), (10, 1, 4), (9, 2, 3), (5, 5, 2)])
def test_score_counter_schedule(tiny, epochs, warmup, period):
    loop = LoopConfig(ratio=0.5, epochs=epochs, warmup_epochs=warmup, score_period=period, horizon_w=2)
    res = run_training(tiny, "agent", loop, SMALL_MODEL, SMALL_AGENT)
    n = len(tiny.train_ids)
    rounds = scoring_rounds(epochs, warmup, period)
    assert res.metrics[-1].score_forwards == n * rounds
    selected = warmup * n + (epochs - warmup) * math.ceil(0.5 * n)
    assert res.metrics[-1].train_forwards == selected
    updates = rounds // 2
    assert res.metrics[-1].agent_forwards == n * rounds + updates * 2 * n * SMALL_AGENT.ppo.update_epochs


@PROPS
@given(seed=st.integers(0, 2**16), ratio=st.floats(0.05, 1.0), w=st.integers(1, 3), k=st.integers(1, 2))
def test_loop_invariants(tiny, seed, ratio, w, k):
    loop = LoopConfig(ratio=ratio, epochs=4, warmup_epochs=1, score_period=k, horizon_w=w, seed=seed)
    scored_states = []

    def watch(rec, state):
        if state.score is not None and not any(state.score.record.features is s for s in scored_states):
            scored_states.append(state.score.record.features)

    res = run_training(tiny, "agent", loop, ModelConfig(hidden_dims=(4,), batch=32),
                       AgentConfig(hidden=4, ppo=PpoConfig(update_epochs=1)), on_epoch=watch)
    n = len(tiny.train_ids)
    prev = (0, 0, 0)
    for m, dec, trained in zip(res.metrics, res.state.decisions, res.state.trained_ids):
        counters = (m.train_forwards, m.score_forwards, m.agent_forwards)
        assert all(c >= p for c, p in zip(counters, prev))
        prev = counters
        ids = dec.selected_ids
        if dec.epoch >= loop.warmup_epochs:
            assert len(ids) == subset_size(n, ratio)
        assert len(set(ids.tolist())) == len(ids) and ids.min() >= 0 and ids.max() < n
        # audit: the trainee saw exactly the selected samples this epoch
        assert np.array_equal(np.sort(trained), ids)
    # buffered transitions hold the very state arrays produced by scoring rounds
    for entry in res.state.window:
        assert any(entry["states"] is s for s in scored_states)
    consumed = len(res.state.updates) * w
    assert consumed + len(res.state.window) == len(scored_states)


def test_static_loss_selects_highest_current_losses(tiny):
    seen = []

    def grab(rec, state):
        if state.score is not None and rec.epoch >= 1:
            seen.append((state.score.record.losses.copy(), state.decisions[-1].selected_ids))

    run_training(tiny, "static_loss", LoopConfig(ratio=0.3, epochs=3), SMALL_MODEL, on_epoch=grab)
    for losses, ids in seen:
        assert ids.tolist() == select_top(losses, 0.3).tolist()


def test_consistency_channel_reaches_rewards(tiny):
    noisy, _ = inject_label_noise(tiny, NoiseSpec(0.2, seed=0))
    st_ = init_state(noisy, "agent", LoopConfig(), SMALL_MODEL, SMALL_AGENT, RewardConfig(use_consistency=True))
    res = score_pool(st_, RewardConfig(use_consistency=True))
    assert "consistency" in res.rewards.weights
    st_ = init_state(noisy, "agent", LoopConfig(), SMALL_MODEL, SMALL_AGENT, RewardConfig())
    assert "consistency" not in score_pool(st_, RewardConfig()).rewards.weights


def test_unknown_strategy_rejected(tiny):
    with pytest.raises(ValueError):
        run_training(tiny, "oracle")
