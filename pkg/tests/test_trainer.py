"""
Tests for augmentation, batching, the training loop and checkpoints.
"""

import sys
import os
import json
from collections import Counter

import numpy as np
import pytest
import torch

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import ModelConfig
from errors import DataError
from knowledge_base import KnowledgeBase, TransformationRecord
from model import EOS_ID, MASK_ID, SEP_ID, SOS_ID, Vocab
from trainer import (
    MANIFEST_FILE,
    augment,
    kl_weight_for,
    load_checkpoint,
    make_batches,
    mask_tokens,
    save_checkpoint,
    shuffle_segments,
    split_segments,
    train,
)

SEGMENTS = ["f0", "f1 log", "f0 f2 +", "f2 sqrt", "f1 f0 *", "f2", "f0 tanh", "f1 f2 /"]


def random_kb(n_records, seed=0):
    rng = np.random.default_rng(seed)
    kb = KnowledgeBase()
    for i in range(n_records):
        chosen = rng.choice(len(SEGMENTS), size=rng.integers(1, 5), replace=False)
        tokens = "<SOS> " + " ".join(SEGMENTS[j] + " <SEP>" for j in chosen) + " <EOS>"
        kb.append(TransformationRecord(tokens=tokens, utility=float(rng.uniform(0.4, 0.9)),
                                       privacy=float(rng.uniform(0.1, 0.7)), dataset_id='toy',
                                       episode=i, step=4))
    return kb


def _small_cfg(**overrides):
    values = dict(embed_dim=8, hidden_dim=16, latent_dim=8, epochs=3, batch_size=8, seed=0)
    values.update(overrides)
    return ModelConfig(**values)


def test_shuffle_keeps_segments_and_framing():
    vocab = Vocab(3)
    ids = vocab.encode("<SOS> f0 f1 + <SEP> f2 log <SEP> f1 <SEP> <EOS>")
    shuffled = shuffle_segments(ids, seed=4)
    assert shuffled[0] == SOS_ID and shuffled[-1] == EOS_ID
    assert shuffled.count(SEP_ID) == 3
    assert Counter(map(tuple, split_segments(shuffled))) == Counter(map(tuple, split_segments(ids)))
    assert shuffle_segments(ids, seed=4) == shuffled


def test_masking_never_touches_framing():
    vocab = Vocab(3)
    ids = vocab.encode("<SOS> f0 f1 + <SEP> f2 <SEP> <EOS>")
    assert mask_tokens(ids, 0.0, seed=0) == ids
    masked = mask_tokens(ids, 1.0, seed=0)
    assert masked == [SOS_ID, MASK_ID, MASK_ID, MASK_ID, SEP_ID, MASK_ID, SEP_ID, EOS_ID]

    out = augment(ids, 0.5, seed=1)
    assert len(out) == len(ids)
    assert [t for t in out if t in (SOS_ID, SEP_ID, EOS_ID)] == [SOS_ID, SEP_ID, SEP_ID, EOS_ID]


def test_kl_weight_schedule():
    assert kl_weight_for(0, 4) == 0.0
    assert kl_weight_for(2, 4) == 0.5
    assert kl_weight_for(10, 4) == 1.0
    assert kl_weight_for(3, 0) == 1.0


def test_batches_never_hold_one_record():
    assert make_batches([0], 4) == [[0, 0]]
    assert make_batches(range(5), 2) == [[0, 1], [2, 3, 4]]
    assert make_batches(range(4), 1) == [[0, 1], [2, 3]]
    assert make_batches(range(6), 4) == [[0, 1, 2, 3], [4, 5]]


def test_training_reduces_loss(tmp_path):
    cfg = _small_cfg(epochs=10, lr=1e-2, kl_warmup_epochs=0, augment=False)
    log_path = tmp_path / 'training_log.jsonl'
    result = train(random_kb(50), cfg, n_features=3, log_path=log_path)

    assert len(result.log) == 10
    assert result.log[0]['epoch'] == 1
    assert result.log[-1]['recon'] < result.log[0]['recon']
    assert result.log[-1]['total'] < result.log[0]['total']
    assert all(entry['kl_weight'] == 1.0 for entry in result.log)

    lines = log_path.read_text().splitlines()
    assert len(lines) == 10
    assert json.loads(lines[-1])['epoch'] == 10


def test_training_is_deterministic():
    kb = random_kb(20)
    first = train(kb, _small_cfg(), n_features=3)
    second = train(kb, _small_cfg(), n_features=3)
    assert first.log == second.log
    for a, b in zip(first.model.parameters(), second.model.parameters()):
        assert torch.equal(a, b)


def test_training_input_errors():
    with pytest.raises(ValueError):
        train(KnowledgeBase(), _small_cfg())
    kb = KnowledgeBase([TransformationRecord("<SOS> f0 <SEP> f2 log <SEP> <EOS>", 0.5, 0.5, "toy", 0, 1)])
    with pytest.raises(DataError):
        train(kb, _small_cfg(), n_features=2)


def test_single_record_corpus_trains():
    result = train(random_kb(1), _small_cfg(epochs=2), n_features=3)
    assert result.log[0]['batches'] == 1


def test_checkpoint_round_trip(tmp_path):
    kb = random_kb(10)
    result = train(kb, _small_cfg(epochs=1), n_features=3)
    save_checkpoint(result, tmp_path / 'model', kb_path='kb.jsonl')

    manifest = json.loads((tmp_path / 'model' / MANIFEST_FILE).read_text())
    assert manifest['n_features'] == 3
    assert manifest['kb_path'] == 'kb.jsonl'
    assert manifest['seed'] == 0

    model, vocab, _ = load_checkpoint(tmp_path / 'model')
    assert vocab.tokens == result.vocab.tokens
    for (name, a), (_, b) in zip(model.state_dict().items(), result.model.state_dict().items()):
        assert torch.equal(a, b), name

    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / 'absent')
