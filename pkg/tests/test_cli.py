"""
Tests for the command-line entry point: argument parsing and exit codes.
"""

import sys
import os
import json

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import delta
from errors import EXIT_CONFIG, EXIT_DATA, EXIT_EMPTY_OUTPUT, EXIT_OK


@pytest.fixture
def csv_path(tmp_path):
    rng = np.random.default_rng(0)
    frame = pd.DataFrame(rng.normal(size=(80, 3)), columns=['x0', 'x1', 'x2'])
    frame['label'] = (frame['x0'] > 0).astype(int)
    frame['group'] = np.where(frame['x2'] > 0, 'a', 'b')
    path = tmp_path / 'toy.csv'
    frame.to_csv(path, index=False)
    return path


def _data_flags(path):
    return ['--data', str(path), '--target', 'label', '--sensitive', 'group']


def test_parser_maps_flags_to_config(tmp_path):
    args = delta.build_parser().parse_args([
        'search', '--data', 'x.csv', '--target', 'y', '--sensitive', 's',
        '--beta-ib', '0.2', '--policy', 'random', '--episodes', '4', '--out', 'kb.jsonl',
    ])
    cfg = delta.resolve_config(args)
    assert cfg.search.beta_ib == 0.2
    assert cfg.search.agent_policy == 'random'
    assert cfg.search.episodes == 4
    assert cfg.data.path == 'x.csv'
    # flags not given keep the defaults
    assert cfg.search.gamma == 0.9
    assert cfg.search.record_timestamps is False

    args = delta.build_parser().parse_args(['train', '--kb', 'kb.jsonl', '--out', 'm', '--no-adversarial'])
    cfg = delta.resolve_config(args)
    assert cfg.model.use_adversarial is False
    assert cfg.model.use_causal is True


def test_config_file_and_flag_precedence(tmp_path):
    path = tmp_path / 'run.yaml'
    path.write_text("seed: 5\nsearch:\n  episodes: 9\n")
    args = delta.build_parser().parse_args(['search', '--config', str(path), '--episodes', '2', '--out', 'kb.jsonl'])
    cfg = delta.resolve_config(args)
    assert cfg.search.episodes == 2
    assert cfg.search.seed == 5


def test_missing_required_flag_exits():
    with pytest.raises(SystemExit):
        delta.build_parser().parse_args(['search', '--data', 'x.csv'])


def test_invalid_config_exit_code(csv_path, tmp_path, capsys):
    code = delta.main(['search', *_data_flags(csv_path), '--beta-ib', '1.5', '--out', str(tmp_path / 'kb.jsonl')])
    assert code == EXIT_CONFIG
    assert 'beta_ib' in capsys.readouterr().err


def test_missing_data_file_exit_code(tmp_path):
    code = delta.main(['evaluate', *_data_flags(tmp_path / 'absent.csv')])
    assert code == EXIT_DATA


def test_unknown_column_exit_code(csv_path):
    code = delta.main(['evaluate', '--data', str(csv_path), '--target', 'label', '--sensitive', 'gender'])
    assert code == EXIT_DATA


def test_zero_episodes_exit_code(csv_path, tmp_path):
    kb_path = tmp_path / 'out' / 'kb.jsonl'
    code = delta.main(['search', *_data_flags(csv_path), '--episodes', '0', '--out', str(kb_path)])
    assert code == EXIT_EMPTY_OUTPUT
    assert kb_path.is_file()
    assert kb_path.read_text() == ''


def test_evaluate_original_features(csv_path, tmp_path, capsys):
    out = tmp_path / 'scores.json'
    code = delta.main(['evaluate', *_data_flags(csv_path), '--learner', 'linear', '--out', str(out)])
    assert code == EXIT_OK

    written = json.loads(out.read_text())
    assert 0.8 <= written['utility'] <= 1.0
    assert 0.0 <= written['privacy'] <= 1.0
    assert written['learner'] == 'linear'
    assert '"utility"' in capsys.readouterr().out


def test_evaluate_token_file(csv_path, tmp_path):
    tokens = tmp_path / 'features.tokens'
    tokens.write_text("<SOS> f0 <SEP> f0 f1 * <SEP> <EOS>\n")
    assert delta.main(['evaluate', *_data_flags(csv_path), '--tokens', str(tokens)]) == EXIT_OK

    tokens.write_text("<SOS> f7 <SEP> <EOS>\n")
    assert delta.main(['evaluate', *_data_flags(csv_path), '--tokens', str(tokens)]) == EXIT_DATA
