"""
Tests for action selection, replay and the TD objective.
"""

import sys
import os

import numpy as np
import pytest
import torch
import torch.nn as nn

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from agents import (
    DQNAgent,
    RandomAgent,
    ReplayBuffer,
    Transition,
    epsilon_at,
    select_action,
    td_loss,
)
from config import SearchConfig
from errors import NoValidActionError


def _fixed_q(values):
    return lambda state: np.asarray(values, dtype=float)


def _linear(in_dim, out_dim, weight, bias):
    layer = nn.Linear(in_dim, out_dim).double()
    with torch.no_grad():
        layer.weight.copy_(torch.tensor(weight, dtype=torch.float64))
        layer.bias.copy_(torch.tensor(bias, dtype=torch.float64))
    return layer


def test_greedy_picks_argmax():
    qnet = _fixed_q([0.1, 0.9, 0.3])
    assert select_action(qnet, np.zeros(2), 0.0, [True, True, True]) == 1


def test_full_exploration_is_uniform():
    qnet = _fixed_q([0.0, 5.0, 0.0, 0.0])
    rng = np.random.default_rng(0)
    counts = np.zeros(4)
    for _ in range(10000):
        counts[select_action(qnet, np.zeros(2), 1.0, [True] * 4, rng)] += 1
    freqs = counts / counts.sum()
    assert np.all((freqs >= 0.22) & (freqs <= 0.28))


def test_mask_restricts_choice():
    qnet = _fixed_q([9.0, 0.0, 1.0])
    rng = np.random.default_rng(1)
    for epsilon in (0.0, 0.5, 1.0):
        for _ in range(50):
            assert select_action(qnet, np.zeros(2), epsilon, [False, False, True], rng) == 2
    with pytest.raises(NoValidActionError):
        select_action(qnet, np.zeros(2), 0.0, [False, False, False])


def test_td_loss_zero_when_prediction_matches_target():
    # Q(s, a) = 1, Q_target(s', .) = 0 and r = 1
    qnet = _linear(1, 1, [[0.0]], [1.0])
    q_target = _linear(1, 1, [[0.0]], [0.0])
    batch = [Transition(np.array([1.0]), 0, 1.0, np.array([1.0]), False)]
    assert td_loss(batch, qnet, q_target, 0.9).item() == pytest.approx(0.0, abs=1e-12)


def test_td_loss_terminal_target_is_reward():
    qnet = _linear(1, 1, [[0.0]], [0.5])
    q_target = _linear(1, 1, [[0.0]], [100.0])
    batch = [Transition(np.array([1.0]), 0, 1.0, np.array([1.0]), True)]
    assert td_loss(batch, qnet, q_target, 0.9).item() == pytest.approx(0.25, abs=1e-12)


def test_td_loss_gradient_matches_finite_difference():
    qnet = _linear(1, 1, [[0.3]], [-0.2])
    q_target = _linear(1, 1, [[0.7]], [0.1])
    batch = [
        Transition(np.array([1.5]), 0, 0.4, np.array([-0.5]), False),
        Transition(np.array([-2.0]), 0, -1.0, np.array([2.0]), True),
    ]
    loss = td_loss(batch, qnet, q_target, 0.9)
    loss.backward()
    analytic = qnet.weight.grad.item()

    eps = 1e-6
    values = []
    for delta in (eps, -eps):
        with torch.no_grad():
            qnet.weight += delta
        values.append(td_loss(batch, qnet, q_target, 0.9).item())
        with torch.no_grad():
            qnet.weight -= delta
    numeric = (values[0] - values[1]) / (2 * eps)
    assert analytic == pytest.approx(numeric, rel=1e-6)


def test_replay_buffer_capacity_and_sampling():
    buffer = ReplayBuffer(3, seed=0)
    for i in range(5):
        buffer.push(Transition(np.zeros(1), i, 0.0, np.zeros(1), False))
    assert len(buffer) == 3
    assert [t.action for t in buffer.transitions] == [2, 3, 4]

    sample = buffer.sample(3)
    assert sorted(t.action for t in sample) == [2, 3, 4]
    with pytest.raises(ValueError):
        buffer.sample(4)
    with pytest.raises(ValueError):
        ReplayBuffer(0)


def test_epsilon_decays_toward_end():
    assert epsilon_at(0, 1.0, 0.05, 100.0) == pytest.approx(1.0)
    assert epsilon_at(10000, 1.0, 0.05, 100.0) == pytest.approx(0.05, abs=1e-6)
    assert epsilon_at(50, 1.0, 0.05, 100.0) < epsilon_at(10, 1.0, 0.05, 100.0)


def test_target_network_changes_only_on_sync():
    cfg = SearchConfig(batch_size=4, hidden_dim=8, learning_rate=1e-2)
    agent = DQNAgent('head', state_dim=3, n_actions=2, cfg=cfg, seed=0)
    rng = np.random.default_rng(0)
    before = agent.target_fingerprint()

    assert agent.learn() is None
    for _ in range(8):
        agent.remember(Transition(rng.normal(size=3), int(rng.integers(2)), 1.0, rng.normal(size=3), False))
    for _ in range(5):
        assert agent.learn() is not None
    assert agent.target_fingerprint() == before

    agent.sync_target()
    assert agent.target_fingerprint() != before


def test_agents_are_seeded():
    cfg = SearchConfig(hidden_dim=8)
    first = DQNAgent('op', 4, 3, cfg, seed=5)
    second = DQNAgent('op', 4, 3, cfg, seed=5)
    assert first.target_fingerprint() == second.target_fingerprint()

    state = np.ones(4)
    assert [first.act(state) for _ in range(20)] == [second.act(state) for _ in range(20)]
    assert first.steps == 20


def test_random_agent_respects_mask():
    agent = RandomAgent('tail', 4, seed=0)
    picks = {agent.act(np.zeros(2), [True, False, True, False]) for _ in range(50)}
    assert picks == {0, 2}
    assert agent.learn() is None
