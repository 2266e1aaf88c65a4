#!/usr/bin/env python3
"""
Privacy-aware feature-set generation from a trained model.

Seeds are the top-utility knowledge-base records. Each is encoded to its
posterior mean, the privacy half is dropped, and the decoder greedily emits
a token string from the utility half. Surviving candidates are scored and
the one maximizing utility - lambda * privacy is returned.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import torch
from joblib import Parallel, delayed

import config
from data import Dataset
from errors import GenerationError
from evaluator import ScoreReport, privacy_score, utility_score
from expr import EOS, FeatureSetSequence, materialize, repair, serialize
from knowledge_base import KnowledgeBase
from model import DisentangledVAE, Vocab, pad_batch

logger = logging.getLogger(__name__)


@dataclass
class Candidate:
    seed_tokens: str
    decoded: List[str]
    sequence: Optional[FeatureSetSequence] = None
    utility: Optional[float] = None
    privacy: Optional[float] = None
    objective: Optional[float] = None

    @property
    def tokens(self) -> Optional[str]:
        return serialize(self.sequence) if self.sequence is not None else None


@dataclass
class GenerationResult:
    sequence: FeatureSetSequence
    report: ScoreReport
    candidates: List[Candidate] = field(default_factory=list)
    selected: int = 0

    @property
    def tokens(self) -> str:
        return serialize(self.sequence)


def latent_batch(model: DisentangledVAE, vocab: Vocab, kb: KnowledgeBase) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior means of every record, split into (z_u, z_p)."""
    if len(kb) == 0:
        raise ValueError("Knowledge base is empty")
    ids = pad_batch([vocab.encode(record.tokens) for record in kb])
    model.eval()
    with torch.no_grad():
        code, _, _ = model.encode(ids, sample=False)
    return code.z_u.cpu().numpy().astype(float), code.z_p.cpu().numpy().astype(float)


def decode_record(model: DisentangledVAE, vocab: Vocab, tokens: str,
                  max_len: Optional[int] = None) -> List[str]:
    """Greedy decode of one record from its MAP utility code, up to and including <EOS>."""
    ids = pad_batch([vocab.encode(tokens)])
    model.eval()
    with torch.no_grad():
        code, states, mask = model.encode(ids, sample=False)
        decoded = model.decode(code.z_u, states, mask, max_len=max_len)
    out = vocab.decode(decoded.ids[0].tolist())
    if EOS in out:
        out = out[:out.index(EOS) + 1]
    return out


def _score_candidate(sequence: FeatureSetSequence, d: Dataset, seed: int,
                     learner: str, n_folds: int) -> Tuple[float, float]:
    transformed = materialize(sequence, d)
    return (
        utility_score(transformed, seed=seed, learner=learner, n_folds=n_folds, n_jobs=1),
        privacy_score(transformed, seed=seed, learner=learner, n_folds=n_folds, n_jobs=1),
    )


def select_candidate(candidates: List[Candidate], selection_lambda: float) -> int:
    """Index of the max utility - lambda * privacy; ties go to the earliest."""
    best, best_value = None, None
    for i, candidate in enumerate(candidates):
        candidate.objective = candidate.utility - selection_lambda * candidate.privacy
        if best_value is None or candidate.objective > best_value:
            best, best_value = i, candidate.objective
    return best


def generate(model: DisentangledVAE, vocab: Vocab, kb: KnowledgeBase, d: Dataset,
             n_candidates: int = 16, selection_lambda: float = 1.0, seed: int = 42,
             learner: str = 'rf', n_folds: int = 5, n_jobs: Optional[int] = None) -> GenerationResult:
    if len(kb) == 0:
        raise ValueError("Knowledge base is empty")
    seeds = kb.top_by_utility(n_candidates)
    max_len = model.cfg.max_decode_len

    diagnostics = []
    survivors: List[Candidate] = []
    seen = set()
    for record in seeds:
        decoded = decode_record(model, vocab, record.tokens, max_len)
        sequence = repair(decoded, d.n_features)
        if sequence is None:
            diagnostics.append({'seed_tokens': record.tokens, 'decoded': ' '.join(decoded),
                                'reason': 'no valid segment'})
            continue
        tokens = serialize(sequence)
        if tokens in seen:
            continue
        seen.add(tokens)
        survivors.append(Candidate(seed_tokens=record.tokens, decoded=decoded, sequence=sequence))

    logger.info(f"Decoded {len(seeds)} seeds: {len(survivors)} distinct valid candidates, "
                f"{len(diagnostics)} discarded")
    if not survivors:
        raise GenerationError(f"None of {len(seeds)} decoded candidates is a valid feature set", diagnostics)

    n_jobs = n_jobs if n_jobs is not None else config.WORKERS
    scores = Parallel(n_jobs=n_jobs)(
        delayed(_score_candidate)(c.sequence, d, seed, learner, n_folds) for c in survivors
    )
    for candidate, (u, p) in zip(survivors, scores):
        candidate.utility = float(u)
        candidate.privacy = float(p)

    selected = select_candidate(survivors, selection_lambda)
    winner = survivors[selected]
    report = ScoreReport(
        utility=winner.utility,
        privacy=winner.privacy,
        metric_names=('macro_f1' if d.is_classification else '1-rae', 'macro_f1'),
        n_folds=n_folds,
        seed=seed,
        learner=learner,
        extra={'objective': winner.objective, 'selection_lambda': selection_lambda},
    )
    logger.info(f"Selected candidate {selected}: utility={winner.utility:.4f} "
                f"privacy={winner.privacy:.4f} ({len(winner.sequence)} features)")
    return GenerationResult(sequence=winner.sequence, report=report, candidates=survivors, selected=selected)
