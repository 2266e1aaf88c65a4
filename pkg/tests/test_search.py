"""
Tests for the state featurizer, reward and the search loop.

Scorers are patched with cheap deterministic stand-ins so the loop runs fast.
"""

import sys
import os
import json
from unittest.mock import patch

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import search
from config import SearchConfig
from data import Dataset
from errors import StatisticsError
from evaluator import RunLog
from expr import parse
from search import FeatureGraphEmbedder, TransformationSearch, brute_force_depth1, build_state, compute_reward


def _dataset(n_rows=80, seed=0):
    rng = np.random.default_rng(seed)
    matrix = rng.normal(size=(n_rows, 3))
    target = (matrix[:, 0] * matrix[:, 1] > 0).astype(int)
    sensitive = (matrix[:, 2] > 0).astype(int)
    return Dataset(matrix, ('a', 'b', 'c'), target, sensitive, 'clf', 'toy')


def _fake_utility(d, seed=0, **kwargs):
    return float(0.25 + 0.5 * np.tanh(np.abs(d.matrix).mean()))


def _fake_privacy(d, seed=0, **kwargs):
    return 0.5


@pytest.fixture
def patched_scorers(monkeypatch):
    monkeypatch.setattr(search, 'utility_score', _fake_utility)
    monkeypatch.setattr(search, 'privacy_score', _fake_privacy)


def _cfg(**overrides):
    values = dict(episodes=1, steps_per_episode=1, hidden_dim=16, d_state=16, batch_size=2, seed=3)
    values.update(overrides)
    return SearchConfig(**values)


def test_state_has_fixed_length():
    rng = np.random.default_rng(0)
    for n_cols in (1, 4, 9):
        assert build_state(rng.normal(size=(30, n_cols))).shape == (64,)
    assert build_state(rng.normal(size=(30, 4)), extra=np.ones(7)).shape == (64,)


def test_state_invariant_to_column_permutation():
    rng = np.random.default_rng(1)
    matrix = rng.normal(size=(50, 5))
    matrix[:, 1] = matrix[:, 0] * 2 + 0.1 * rng.normal(size=50)
    target = rng.integers(0, 2, size=50)
    perm = [4, 2, 0, 3, 1]
    np.testing.assert_allclose(build_state(matrix, target=target), build_state(matrix[:, perm], target=target),
                               rtol=1e-10, atol=1e-12)


def test_adjacency_follows_correlation():
    rng = np.random.default_rng(2)
    x = rng.normal(size=200)
    matrix = np.column_stack([x, 2 * x + 0.05 * rng.normal(size=200), rng.normal(size=200)])
    adj = FeatureGraphEmbedder().adjacency(matrix)
    assert adj[0, 1] == 1.0
    assert adj[0, 2] == 0.0
    np.testing.assert_array_equal(np.diag(adj), [1.0, 1.0, 1.0])


def test_state_needs_two_rows():
    with pytest.raises(StatisticsError):
        build_state(np.ones((1, 3)))
    with pytest.raises(StatisticsError):
        build_state(np.ones((5, 0)))


def test_constant_column_has_finite_state():
    matrix = np.column_stack([np.ones(20), np.arange(20.0)])
    assert np.isfinite(build_state(matrix)).all()


def test_compute_reward():
    assert compute_reward(0.7, 0.6, 0.1) == pytest.approx(0.09)
    assert compute_reward(0.6, 0.6, 0.5) == 0.0
    assert compute_reward(0.5, 0.6, 0.0) == pytest.approx(-0.1)


def test_single_step_episode_yields_parseable_record(patched_scorers, tmp_path):
    log = RunLog(tmp_path / 'run_log.jsonl')
    kb = TransformationSearch(_dataset(), _cfg(), run_log=log).run()

    assert len(kb) == 1
    record = kb[0]
    seq = parse(record.tokens, n_features=3)
    assert len(seq) == 4
    assert record.step == 1
    assert record.privacy == 0.5
    assert record.timestamp is None

    entry = json.loads((tmp_path / 'run_log.jsonl').read_text().splitlines()[0])
    assert entry['stage'] == 'search'
    assert entry['tokens'] == record.tokens


def test_rewards_telescope(patched_scorers):
    engine = TransformationSearch(_dataset(), _cfg(episodes=2, steps_per_episode=5, beta_ib=0.2))
    engine.run()
    for entry in engine.history:
        assert len(entry['rewards']) == 5
        expected = 0.8 * (entry['perf_final'] - entry['perf_initial'])
        assert sum(entry['rewards']) == pytest.approx(expected, abs=1e-12)


def test_search_is_deterministic(patched_scorers):
    cfg = _cfg(episodes=3, steps_per_episode=4, epsilon_start=0.0, epsilon_end=0.0)
    first = TransformationSearch(_dataset(), cfg).run()
    second = TransformationSearch(_dataset(), cfg).run()
    assert [r.tokens for r in first] == [r.tokens for r in second]


def test_expressions_respect_token_cap(patched_scorers):
    cfg = _cfg(episodes=1, steps_per_episode=20, max_expr_tokens=5)
    kb = TransformationSearch(_dataset(), cfg).run()
    for expr in parse(kb[0].tokens).exprs:
        assert len(expr) <= 5


def test_random_policy(patched_scorers):
    engine = TransformationSearch(_dataset(), _cfg(agent_policy='random', episodes=2, steps_per_episode=3))
    kb = engine.run()
    assert len(kb) == 2
    assert engine.head.learn() is None


def test_zero_episodes_gives_empty_knowledge_base(patched_scorers, caplog):
    kb = TransformationSearch(_dataset(), _cfg(episodes=0)).run()
    assert len(kb) == 0
    assert '0 episodes' in caplog.text


def test_brute_force_ranks_binary_pairs():
    def favor_product(d, seed=0, **kwargs):
        return 0.9 if d.feature_names[-1] == 'f0 f1 *' else 0.1

    with patch('search.utility_score', side_effect=favor_product) as scorer:
        ranked = brute_force_depth1(_dataset(), seed=0, n_jobs=1)
    assert scorer.call_count == 24

    # four binary operators over six ordered pairs
    assert len(ranked) == 24
    assert ranked[0] == ("<SOS> f0 <SEP> f1 <SEP> f2 <SEP> f0 f1 * <SEP> <EOS>", 0.9)
    assert all(score == 0.1 for _, score in ranked[1:])
