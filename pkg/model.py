#!/usr/bin/env python3
"""
Disentangled variational sequence model over feature-set token strings.

The encoder maps a token sequence to a diagonal Gaussian posterior whose
sample z is split into a utility half z_u (first) and a privacy half z_p
(second). Four sigmoid heads read the halves, and an attentive LSTM decoder
reconstructs the sequence from z_u alone.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from config import ModelConfig
from errors import VocabularyError
from expr import EOS, MASK, PAD, SEP, SOS, lookup_operator, operator_registry

logger = logging.getLogger(__name__)

SPECIAL_TOKENS = (PAD, SOS, SEP, EOS, MASK)
PAD_ID, SOS_ID, SEP_ID, EOS_ID, MASK_ID = range(len(SPECIAL_TOKENS))
FRAMING_IDS = (PAD_ID, SOS_ID, SEP_ID, EOS_ID)


class Vocab:
    """Token <-> id map: special tokens, then f0..f{K-1}, then operator symbols."""

    def __init__(self, n_features: int):
        if n_features < 1:
            raise ValueError(f"Vocabulary needs at least one feature, got {n_features}")
        self.n_features = n_features
        self.tokens: List[str] = list(SPECIAL_TOKENS)
        self.tokens += [f"f{i}" for i in range(n_features)]
        self.tokens += [op.symbol for op in operator_registry()]
        self.ids: Dict[str, int] = {token: i for i, token in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def token_id(self, token: str, position: Optional[int] = None) -> int:
        """Id of a token; operators may also be given by registry name (safe_log for log)."""
        if token in self.ids:
            return self.ids[token]
        op = lookup_operator(token)
        if op is not None:
            return self.ids[op.symbol]
        raise VocabularyError(f"Token '{token}' is not in the vocabulary", position=position, token=token)

    def encode(self, tokens: Union[str, Sequence[str]]) -> List[int]:
        """Token string or list to ids. Unknown tokens raise VocabularyError with their position."""
        if isinstance(tokens, str):
            tokens = tokens.split()
        return [self.token_id(token, i) for i, token in enumerate(tokens)]

    def decode(self, ids: Sequence[int]) -> List[str]:
        """Ids back to token strings."""
        out = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.tokens):
                raise VocabularyError(f"Id {i} is outside the vocabulary")
            out.append(self.tokens[i])
        return out

    def is_special(self, token_id: int) -> bool:
        return token_id < len(SPECIAL_TOKENS)

    def to_dict(self) -> dict:
        return {'n_features': self.n_features, 'tokens': list(self.tokens)}

    @classmethod
    def from_dict(cls, payload: dict) -> "Vocab":
        vocab = cls(int(payload['n_features']))
        if 'tokens' in payload and list(payload['tokens']) != vocab.tokens:
            raise VocabularyError("Stored vocabulary does not match the operator registry")
        return vocab


@dataclass
class LatentCode:
    mu: torch.Tensor
    logvar: torch.Tensor
    z: torch.Tensor
    eps: torch.Tensor

    @property
    def half(self) -> int:
        return self.z.shape[-1] // 2

    @property
    def z_u(self) -> torch.Tensor:
        return self.z[..., :self.half]

    @property
    def z_p(self) -> torch.Tensor:
        return self.z[..., self.half:]


@dataclass
class HeadOutputs:
    """Head logits; the sigmoid probabilities are exposed as properties."""
    u_logit: torch.Tensor
    p_logit: torch.Tensor
    p_adv_logit: torch.Tensor
    u_adv_logit: torch.Tensor

    @property
    def u_hat(self) -> torch.Tensor:
        return torch.sigmoid(self.u_logit)

    @property
    def p_hat(self) -> torch.Tensor:
        return torch.sigmoid(self.p_logit)

    @property
    def p_adv(self) -> torch.Tensor:
        return torch.sigmoid(self.p_adv_logit)

    @property
    def u_adv(self) -> torch.Tensor:
        return torch.sigmoid(self.u_adv_logit)


class GradientReversal(torch.autograd.Function):
    """Identity forward; gradient multiplied by -scale on the way back."""

    @staticmethod
    def forward(ctx, x, scale):
        ctx.scale = scale
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output.neg() * ctx.scale, None


def reverse_gradient(x: torch.Tensor, scale: float = 1.0) -> torch.Tensor:
    return GradientReversal.apply(x, scale)


class SequenceEncoder(nn.Module):
    """
    Embedding + LSTM over the token ids. Hidden states are mean-pooled over
    non-PAD steps and projected to the Gaussian posterior (mu, logvar).
    """

    def __init__(self, vocab_size: int, embed_dim: int, hidden_dim: int, latent_dim: int):
        super().__init__()
        self.vocab_size = vocab_size
        self.embedding = nn.Embedding(vocab_size, embed_dim, padding_idx=PAD_ID)
        self.rnn = nn.LSTM(embed_dim, hidden_dim, batch_first=True)
        self.to_mu = nn.Linear(hidden_dim, latent_dim)
        self.to_logvar = nn.Linear(hidden_dim, latent_dim)

    @staticmethod
    def pool(states: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Mean over non-PAD steps."""
        weights = mask.unsqueeze(-1).to(states.dtype)
        counts = weights.sum(dim=1).clamp(min=1.0)
        return (states * weights).sum(dim=1) / counts

    def forward(self, ids: torch.Tensor, sample: bool = True, noise: Optional[torch.Tensor] = None):
        """Returns (LatentCode, per-step hidden states, non-PAD mask)."""
        if ids.numel() == 0:
            raise ValueError("Cannot encode an empty sequence")
        if int(ids.min()) < 0 or int(ids.max()) >= self.vocab_size:
            raise VocabularyError(f"Token id outside vocabulary of size {self.vocab_size}")
        mask = ids != PAD_ID
        states, _ = self.rnn(self.embedding(ids))
        pooled = self.pool(states, mask)
        mu = self.to_mu(pooled)
        logvar = self.to_logvar(pooled)
        if noise is not None:
            eps = noise
        elif sample:
            eps = torch.randn_like(mu)
        else:
            eps = torch.zeros_like(mu)
        z = mu + torch.exp(0.5 * logvar) * eps
        return LatentCode(mu=mu, logvar=logvar, z=z, eps=eps), states, mask


class PredictionHeads(nn.Module):
    """
    u_hat from z_u and p_hat from z_p; the adversaries read the opposite
    halves (p_adv from z_u, u_adv from z_p). Adversary weights sit behind a
    gradient reversal, so minimizing -BCE trains them to lower BCE while the
    encoder is pushed to raise it.
    """

    def __init__(self, half_dim: int, adversarial_scale: float = 1.0):
        super().__init__()
        self.utility = nn.Linear(half_dim, 1)
        self.privacy = nn.Linear(half_dim, 1)
        self.adv_privacy = nn.Linear(half_dim, 1)
        self.adv_utility = nn.Linear(half_dim, 1)
        self.adversarial_scale = adversarial_scale

    def _adversary(self, layer: nn.Linear, z: torch.Tensor) -> torch.Tensor:
        weight = reverse_gradient(layer.weight, self.adversarial_scale)
        bias = reverse_gradient(layer.bias, self.adversarial_scale)
        return F.linear(z, weight, bias).squeeze(-1)

    def forward(self, code: LatentCode) -> HeadOutputs:
        z_u, z_p = code.z_u, code.z_p
        return HeadOutputs(
            u_logit=self.utility(z_u).squeeze(-1),
            p_logit=self.privacy(z_p).squeeze(-1),
            p_adv_logit=self._adversary(self.adv_privacy, z_u),
            u_adv_logit=self._adversary(self.adv_utility, z_p),
        )


@dataclass
class DecoderOutput:
    logits: torch.Tensor      # (batch, steps, vocab)
    attention: torch.Tensor   # (batch, steps, source length)
    ids: torch.Tensor         # (batch, steps) argmax tokens

    @property
    def distributions(self) -> torch.Tensor:
        return F.softmax(self.logits, dim=-1)


class AttentionDecoder(nn.Module):
    """LSTMCell decoder with additive attention; initialized from z_u only."""

    def __init__(self, vocab_size: int, embed_dim: int, hidden_dim: int, half_dim: int):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.embedding = nn.Embedding(vocab_size, embed_dim, padding_idx=PAD_ID)
        self.init_hidden = nn.Linear(half_dim, hidden_dim)
        self.attn_hidden = nn.Linear(hidden_dim, hidden_dim, bias=False)
        self.attn_states = nn.Linear(hidden_dim, hidden_dim)
        self.attn_score = nn.Linear(hidden_dim, 1, bias=False)
        self.cell = nn.LSTMCell(embed_dim + hidden_dim, hidden_dim)
        self.out = nn.Linear(hidden_dim, vocab_size)

    def attend(self, h: torch.Tensor, states: torch.Tensor, mask: torch.Tensor,
               projected_states: Optional[torch.Tensor] = None):
        if projected_states is None:
            projected_states = self.attn_states(states)
        scores = self.attn_score(torch.tanh(self.attn_hidden(h).unsqueeze(1) + projected_states)).squeeze(-1)
        scores = scores.masked_fill(~mask, float('-inf'))
        weights = F.softmax(scores, dim=-1)
        context = torch.bmm(weights.unsqueeze(1), states).squeeze(1)
        return context, weights

    def _step(self, prev_ids, h, c, states, mask, projected_states):
        context, weights = self.attend(h, states, mask, projected_states)
        h, c = self.cell(torch.cat([self.embedding(prev_ids), context], dim=-1), (h, c))
        return self.out(h), h, c, weights

    def forward(self, z_u: torch.Tensor, states: torch.Tensor, mask: torch.Tensor,
                forced_ids: Optional[torch.Tensor] = None, max_len: int = 256) -> DecoderOutput:
        """
        With forced_ids the inputs are forced_ids[:, :-1] and step t predicts
        forced_ids[:, t + 1]. Without, decoding is greedy from <SOS> until
        every row has produced <EOS> or max_len steps have run.
        """
        if states.shape[1] == 0:
            raise ValueError("Decoder needs at least one encoder state")
        batch = z_u.shape[0]
        h = self.init_hidden(z_u)
        c = torch.zeros_like(h)
        projected_states = self.attn_states(states)

        all_logits, all_weights, all_ids = [], [], []
        if forced_ids is not None:
            for t in range(forced_ids.shape[1] - 1):
                logits, h, c, weights = self._step(forced_ids[:, t], h, c, states, mask, projected_states)
                all_logits.append(logits)
                all_weights.append(weights)
                all_ids.append(logits.argmax(dim=-1))
        else:
            prev = torch.full((batch,), SOS_ID, dtype=torch.long, device=z_u.device)
            finished = torch.zeros(batch, dtype=torch.bool, device=z_u.device)
            for _ in range(max_len):
                logits, h, c, weights = self._step(prev, h, c, states, mask, projected_states)
                prev = logits.argmax(dim=-1)
                all_logits.append(logits)
                all_weights.append(weights)
                all_ids.append(prev)
                finished = finished | (prev == EOS_ID)
                if bool(finished.all()):
                    break
        return DecoderOutput(
            logits=torch.stack(all_logits, dim=1),
            attention=torch.stack(all_weights, dim=1),
            ids=torch.stack(all_ids, dim=1),
        )


@dataclass
class ModelOutputs:
    code: LatentCode
    heads: HeadOutputs
    decoded: DecoderOutput


class DisentangledVAE(nn.Module):
    def __init__(self, vocab_size: int, cfg: ModelConfig):
        super().__init__()
        if cfg.latent_dim % 2:
            raise ValueError(f"latent_dim must be even, got {cfg.latent_dim}")
        half = cfg.latent_dim // 2
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.encoder = SequenceEncoder(vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.latent_dim)
        self.heads = PredictionHeads(half)
        self.decoder = AttentionDecoder(vocab_size, cfg.embed_dim, cfg.hidden_dim, half)

    def encode(self, ids: torch.Tensor, sample: bool = True, noise: Optional[torch.Tensor] = None):
        """Posterior code, encoder states and non-PAD mask for a padded batch."""
        return self.encoder(ids, sample=sample, noise=noise)

    def decode(self, z_u: torch.Tensor, states: torch.Tensor, mask: torch.Tensor,
               forced_ids: Optional[torch.Tensor] = None, max_len: Optional[int] = None) -> DecoderOutput:
        """Decodes on forced_ids when given, greedily otherwise. Only z_u reaches the decoder."""
        max_len = max_len if max_len is not None else self.cfg.max_decode_len
        return self.decoder(z_u, states, mask, forced_ids=forced_ids, max_len=max_len)

    def forward(self, enc_ids: torch.Tensor, target_ids: torch.Tensor,
                noise: Optional[torch.Tensor] = None, sample: bool = True) -> ModelOutputs:
        code, states, mask = self.encode(enc_ids, sample=sample, noise=noise)
        heads = self.heads(code)
        decoded = self.decode(code.z_u, states, mask, forced_ids=target_ids)
        return ModelOutputs(code=code, heads=heads, decoded=decoded)


def pad_batch(sequences: Sequence[Sequence[int]]) -> torch.Tensor:
    """Right-pad id lists with PAD into a (batch, max_len) LongTensor."""
    if not sequences:
        raise ValueError("Cannot pad an empty batch")
    length = max(len(seq) for seq in sequences)
    batch = torch.full((len(sequences), length), PAD_ID, dtype=torch.long)
    for i, seq in enumerate(sequences):
        batch[i, :len(seq)] = torch.as_tensor(list(seq), dtype=torch.long)
    return batch
