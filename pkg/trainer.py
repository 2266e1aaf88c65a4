#!/usr/bin/env python3
"""
Training loop and checkpointing for the disentangled sequence VAE.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import torch

from config import ModelConfig
from errors import DataError
from knowledge_base import KnowledgeBase
from losses import LossBreakdown, compute_losses
from model import (
    EOS_ID,
    FRAMING_IDS,
    MASK_ID,
    SEP_ID,
    SOS_ID,
    DisentangledVAE,
    Vocab,
    pad_batch,
)

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = 'model.pt'
MANIFEST_FILE = 'manifest.json'
TRAINING_LOG_FILE = 'training_log.jsonl'

RngLike = Union[int, np.random.Generator, None]


def _rng(seed: RngLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def split_segments(ids: Sequence[int]) -> List[List[int]]:
    """Segments of a framed id sequence, without <SOS>, <SEP> or <EOS>."""
    ids = list(ids)
    if ids and ids[0] == SOS_ID:
        ids = ids[1:]
    if EOS_ID in ids:
        ids = ids[:ids.index(EOS_ID)]
    segments, current = [], []
    for token_id in ids:
        if token_id == SEP_ID:
            if current:
                segments.append(current)
            current = []
        else:
            current.append(token_id)
    if current:
        segments.append(current)
    return segments


def frame_segments(segments: Sequence[Sequence[int]]) -> List[int]:
    ids = [SOS_ID]
    for segment in segments:
        ids.extend(segment)
        ids.append(SEP_ID)
    ids.append(EOS_ID)
    return ids


def shuffle_segments(ids: Sequence[int], seed: RngLike = None) -> List[int]:
    """Reorder the SEP-delimited segments; a feature set has no order."""
    segments = split_segments(ids)
    order = _rng(seed).permutation(len(segments))
    return frame_segments([segments[i] for i in order])


def mask_tokens(ids: Sequence[int], mask_prob: float, seed: RngLike = None) -> List[int]:
    """Replace each non-framing token with <MASK> with probability mask_prob."""
    rng = _rng(seed)
    out = []
    for token_id in ids:
        if token_id not in FRAMING_IDS and rng.random() < mask_prob:
            out.append(MASK_ID)
        else:
            out.append(int(token_id))
    return out


def augment(ids: Sequence[int], mask_prob: float, seed: RngLike = None) -> List[int]:
    """Segment shuffle followed by token masking; framing tokens are never touched."""
    rng = _rng(seed)
    return mask_tokens(shuffle_segments(ids, rng), mask_prob, rng)


def kl_weight_for(epoch: int, warmup_epochs: int) -> float:
    """Linear 0 -> 1 over the warmup epochs (epoch is 0-based)."""
    if warmup_epochs <= 0:
        return 1.0
    return min(1.0, epoch / warmup_epochs)


def make_batches(order: Sequence[int], batch_size: int) -> List[List[int]]:
    """
    Consecutive batches of indices, each with at least two entries. A trailing
    singleton joins the previous batch; a one-record corpus is duplicated.
    """
    order = list(order)
    if len(order) == 1:
        return [order * 2]
    batch_size = max(batch_size, 2)
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2].extend(batches.pop())
    return batches


@dataclass
class TrainingResult:
    model: DisentangledVAE
    vocab: Vocab
    cfg: ModelConfig
    log: List[dict] = field(default_factory=list)


def compute_batch_loss(model: DisentangledVAE, enc_ids: torch.Tensor, target_ids: torch.Tensor,
                       u: torch.Tensor, p: torch.Tensor, cfg: ModelConfig, kl_weight: float,
                       noise: Optional[torch.Tensor] = None) -> LossBreakdown:
    outputs = model(enc_ids, target_ids, noise=noise)
    return compute_losses(outputs, target_ids, u, p, cfg, kl_weight)


def encode_records(kb: KnowledgeBase, vocab: Vocab) -> List[List[int]]:
    return [vocab.encode(record.tokens) for record in kb]


def train(kb: KnowledgeBase, cfg: ModelConfig, n_features: Optional[int] = None,
          log_path=None) -> TrainingResult:
    """
    Mini-batch Adam training over the knowledge base. Deterministic for a
    fixed cfg.seed; one log entry per epoch with the mean of every loss term.
    """
    if len(kb) == 0:
        raise ValueError("Cannot train on an empty knowledge base")
    needed = kb.max_feature_index() + 1
    n_features = n_features if n_features is not None else needed
    if n_features < needed:
        raise DataError(f"Knowledge base references f{needed - 1} but the dataset has {n_features} features")

    vocab = Vocab(n_features)
    sequences = encode_records(kb, vocab)
    utilities = torch.tensor([r.utility for r in kb], dtype=torch.float32)
    privacies = torch.tensor([r.privacy for r in kb], dtype=torch.float32)
    warmup = cfg.warmup_epochs
    rng = np.random.default_rng(cfg.seed)

    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_path.write_text('', encoding='utf-8')

    log = []
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        model = DisentangledVAE(len(vocab), cfg)
        optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
        logger.info(
            f"Training on {len(kb)} records, vocab {len(vocab)}, "
            f"{sum(p.numel() for p in model.parameters())} parameters"
        )

        for epoch in range(cfg.epochs):
            model.train()
            kl_weight = kl_weight_for(epoch, warmup)
            sums = {}
            batches = make_batches(rng.permutation(len(sequences)), cfg.batch_size)
            for batch in batches:
                if cfg.augment:
                    targets = [shuffle_segments(sequences[i], rng) for i in batch]
                    inputs = [mask_tokens(t, cfg.mask_prob, rng) for t in targets]
                else:
                    targets = [sequences[i] for i in batch]
                    inputs = targets
                index = torch.as_tensor(batch, dtype=torch.long)
                losses = compute_batch_loss(
                    model, pad_batch(inputs), pad_batch(targets),
                    utilities[index], privacies[index], cfg, kl_weight,
                )
                optimizer.zero_grad()
                losses.total.backward()
                if cfg.grad_clip and cfg.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                optimizer.step()
                for name, value in losses.to_dict().items():
                    sums[name] = sums.get(name, 0.0) + value

            entry = {'epoch': epoch + 1, 'batches': len(batches)}
            entry.update({name: total / len(batches) for name, total in sums.items()})
            log.append(entry)
            if log_path is not None:
                with open(log_path, 'a', encoding='utf-8') as handle:
                    handle.write(json.dumps(entry, sort_keys=True) + '\n')
            logger.info(
                f"Epoch {epoch + 1}/{cfg.epochs}: total={entry['total']:.4f} "
                f"recon={entry['recon']:.4f} kl={entry['kl']:.4f} kl_weight={kl_weight:.2f}"
            )

    model.eval()
    return TrainingResult(model=model, vocab=vocab, cfg=cfg, log=log)


def save_checkpoint(result: TrainingResult, out_dir, kb_path: Optional[str] = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save(result.model.state_dict(), out_dir / CHECKPOINT_FILE)
    manifest = {
        'vocab': result.vocab.to_dict(),
        'model_config': asdict(result.cfg),
        'training_log': TRAINING_LOG_FILE,
        'seed': result.cfg.seed,
        'n_features': result.vocab.n_features,
        'kb_path': str(kb_path) if kb_path is not None else None,
    }
    with open(out_dir / MANIFEST_FILE, 'w', encoding='utf-8') as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
    logger.info(f"Saved checkpoint to {out_dir}")
    return out_dir


def load_checkpoint(model_dir):
    """Returns (model, vocab, manifest)."""
    model_dir = Path(model_dir)
    manifest_path = model_dir / MANIFEST_FILE
    weights_path = model_dir / CHECKPOINT_FILE
    for path in (manifest_path, weights_path):
        if not path.is_file():
            raise FileNotFoundError(f"Checkpoint file not found: {path}")
    with open(manifest_path, 'r', encoding='utf-8') as handle:
        manifest = json.load(handle)
    cfg = ModelConfig(**manifest['model_config'])
    vocab = Vocab.from_dict(manifest['vocab'])
    model = DisentangledVAE(len(vocab), cfg)
    model.load_state_dict(torch.load(weights_path, map_location='cpu'))
    model.eval()
    return model, vocab, manifest
