"""
Tests for the vocabulary, encoder, heads and attention decoder.
"""

import sys
import os

import pytest
import torch
import torch.nn as nn

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import ModelConfig
from errors import VocabularyError
from model import (
    EOS_ID,
    PAD_ID,
    SOS_ID,
    AttentionDecoder,
    DisentangledVAE,
    LatentCode,
    PredictionHeads,
    SequenceEncoder,
    Vocab,
    pad_batch,
    reverse_gradient,
)

SMALL = dict(embed_dim=8, hidden_dim=16, latent_dim=16)


def _model(seed=0, **overrides):
    torch.manual_seed(seed)
    values = dict(SMALL)
    values.update(overrides)
    vocab = Vocab(3)
    return DisentangledVAE(len(vocab), ModelConfig(**values)), vocab


def _batch(vocab):
    return pad_batch([
        vocab.encode("<SOS> f0 f1 + <SEP> <EOS>"),
        vocab.encode("<SOS> f2 log <SEP> f0 <SEP> <EOS>"),
    ])


def test_vocab_layout_and_errors():
    vocab = Vocab(3)
    assert vocab.tokens[:5] == ['<PAD>', '<SOS>', '<SEP>', '<EOS>', '<MASK>']
    assert vocab.tokens[5:8] == ['f0', 'f1', 'f2']
    assert len(vocab) == 5 + 3 + 14
    assert vocab.encode("f0 safe_log") == vocab.encode("f0 log")
    assert vocab.decode(vocab.encode("<SOS> f1 <SEP> <EOS>")) == ['<SOS>', 'f1', '<SEP>', '<EOS>']

    with pytest.raises(VocabularyError):
        vocab.encode("f0 f3")
    with pytest.raises(VocabularyError):
        vocab.decode([len(vocab)])
    assert Vocab.from_dict(vocab.to_dict()).tokens == vocab.tokens
    with pytest.raises(VocabularyError):
        Vocab.from_dict({'n_features': 3, 'tokens': ['<PAD>']})


def test_zero_noise_gives_posterior_mean():
    model, vocab = _model()
    ids = _batch(vocab)
    code, _, _ = model.encode(ids, noise=torch.zeros(2, 16))
    assert torch.equal(code.z, code.mu)
    assert code.z_u.shape == (2, 8)
    assert code.z_p.shape == (2, 8)
    assert torch.equal(torch.cat([code.z_u, code.z_p], dim=-1), code.z)

    deterministic, _, _ = model.encode(ids, sample=False)
    torch.testing.assert_close(deterministic.z, code.mu)


def test_reparameterization_statistics():
    model, vocab = _model()
    ids = pad_batch([vocab.encode("<SOS> f0 f1 * <SEP> <EOS>")] * 4000)
    torch.manual_seed(1)
    with torch.no_grad():
        code, _, _ = model.encode(ids)
    std = torch.exp(0.5 * code.logvar[0])
    assert torch.all((code.z.mean(dim=0) - code.mu[0]).abs() < 0.1 * std)
    assert torch.all((code.z.std(dim=0) / std - 1).abs() < 0.1)


def test_encoder_pooling_matches_direct_average():
    states = torch.arange(24, dtype=torch.float64).reshape(2, 3, 4)
    mask = torch.tensor([[True, True, False], [True, True, True]])
    pooled = SequenceEncoder.pool(states, mask)
    torch.testing.assert_close(pooled[0], (states[0, 0] + states[0, 1]) / 2)
    torch.testing.assert_close(pooled[1], states[1].sum(dim=0) / 3)


def test_encoder_rejects_unknown_ids():
    model, vocab = _model()
    with pytest.raises(VocabularyError):
        model.encode(torch.tensor([[SOS_ID, len(vocab)]]))


def test_zero_weight_heads_give_one_half():
    heads = PredictionHeads(4)
    for layer in (heads.utility, heads.privacy, heads.adv_privacy, heads.adv_utility):
        nn.init.zeros_(layer.weight)
        nn.init.zeros_(layer.bias)
    z = torch.randn(3, 8)
    code = LatentCode(mu=z, logvar=torch.zeros_like(z), z=z, eps=torch.zeros_like(z))
    out = heads(code)
    for prob in (out.u_hat, out.p_hat, out.p_adv, out.u_adv):
        torch.testing.assert_close(prob, torch.full((3,), 0.5))

    with torch.no_grad():
        heads.utility.bias.fill_(2.0)
    assert heads(code).u_hat[0].item() == pytest.approx(0.8808, abs=1e-4)


def test_heads_read_their_own_half():
    torch.manual_seed(0)
    heads = PredictionHeads(4)
    z = torch.randn(5, 8)
    changed_p = z.clone()
    changed_p[:, 4:] = torch.randn(5, 4)

    def run(latent):
        return heads(LatentCode(mu=latent, logvar=torch.zeros_like(latent), z=latent, eps=torch.zeros_like(latent)))

    before, after = run(z), run(changed_p)
    assert torch.equal(before.u_hat, after.u_hat)
    assert torch.equal(before.p_adv, after.p_adv)
    assert not torch.allclose(before.p_hat, after.p_hat)
    assert not torch.allclose(before.u_adv, after.u_adv)


def test_decoder_ignores_privacy_half():
    model, vocab = _model()
    ids = _batch(vocab)
    noise = torch.randn(2, 16)
    other = noise.clone()
    other[:, 8:] = torch.randn(2, 8) * 5
    first = model(ids, ids, noise=noise)
    second = model(ids, ids, noise=other)
    assert torch.equal(first.decoded.logits, second.decoded.logits)
    assert not torch.allclose(first.code.z_p, second.code.z_p)


def test_decoder_distributions_and_attention():
    model, vocab = _model()
    ids = _batch(vocab)
    out = model(ids, ids, sample=False)

    assert out.decoded.logits.shape == (2, ids.shape[1] - 1, len(vocab))
    torch.testing.assert_close(out.decoded.distributions.sum(dim=-1), torch.ones(2, ids.shape[1] - 1))
    torch.testing.assert_close(out.decoded.attention.sum(dim=-1), torch.ones(2, ids.shape[1] - 1))
    # first row is padded after position 5
    pad_positions = ids[0] == PAD_ID
    assert torch.all(out.decoded.attention[0][:, pad_positions] == 0)


def test_attention_over_single_state_returns_that_state():
    torch.manual_seed(0)
    decoder = AttentionDecoder(vocab_size=10, embed_dim=4, hidden_dim=6, half_dim=3)
    states = torch.randn(2, 1, 6)
    context, weights = decoder.attend(torch.randn(2, 6), states, torch.ones(2, 1, dtype=torch.bool))
    assert torch.equal(weights, torch.ones(2, 1))
    assert torch.equal(context, states[:, 0])


def test_greedy_decode_respects_max_len():
    model, vocab = _model()
    ids = _batch(vocab)
    with torch.no_grad():
        code, states, mask = model.encode(ids, sample=False)
        out = model.decode(code.z_u, states, mask, max_len=7)
    assert out.ids.shape[0] == 2
    assert 1 <= out.ids.shape[1] <= 7
    finished = (out.ids == EOS_ID).any(dim=1)
    if out.ids.shape[1] < 7:
        assert bool(finished.all())


def test_gradient_reversal():
    x = torch.tensor([1.0, -2.0], requires_grad=True)
    (reverse_gradient(x, 0.5) * torch.tensor([3.0, 4.0])).sum().backward()
    torch.testing.assert_close(x.grad, torch.tensor([-1.5, -2.0]))


def test_model_requires_even_latent():
    with pytest.raises(ValueError):
        DisentangledVAE(10, ModelConfig(latent_dim=7))


def test_pad_batch():
    batch = pad_batch([[1, 5, 3], [1, 3]])
    assert batch.tolist() == [[1, 5, 3], [1, 3, PAD_ID]]
    with pytest.raises(ValueError):
        pad_batch([])
