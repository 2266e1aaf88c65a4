#!/usr/bin/env python3
"""
Phase I: cascading head-feature / operator / tail-feature agents explore
feature transformations and collect a scored knowledge base.
"""

import logging
from datetime import datetime
from itertools import permutations
from typing import Dict, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

import config
from agents import DQNAgent, RandomAgent, Transition
from config import SearchConfig
from data import Dataset
from errors import DataError, StatisticsError
from evaluator import RunLog, ScoreReport, privacy_score, utility_score
from expr import (
    Arity,
    EvaluationStats,
    FeatureExpr,
    FeatureSetSequence,
    evaluate,
    feature_names_for,
    identity_sequence,
    operator_registry,
    serialize,
)
from knowledge_base import KnowledgeBase, TransformationRecord

logger = logging.getLogger(__name__)

N_NODE_STATS = 6


def _squash(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.log1p(np.abs(x))


class FeatureGraphEmbedder:
    """
    Fixed (untrained) graph-convolution featurizer.

    Columns are nodes, edges join columns whose |Pearson r| reaches the
    threshold, and one normalized convolution with a seeded projection maps
    per-column statistics to node embeddings that are mean-pooled.
    """

    def __init__(self, seed: int = 0, d_state: int = 64, threshold: float = 0.3):
        self.seed = seed
        self.d_state = d_state
        self.threshold = threshold
        rng = np.random.default_rng(seed)
        self.weight = rng.normal(0.0, 1.0 / np.sqrt(N_NODE_STATS), size=(N_NODE_STATS, d_state))
        self._projections: Dict[int, np.ndarray] = {}

    @staticmethod
    def _check(matrix) -> np.ndarray:
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[1] < 1:
            raise StatisticsError(f"State needs a 2-D matrix with at least one column, got {matrix.shape}")
        if matrix.shape[0] < 2:
            raise StatisticsError(f"State needs at least 2 rows, got {matrix.shape[0]}")
        return matrix

    @staticmethod
    def abs_correlation(matrix: np.ndarray) -> np.ndarray:
        with np.errstate(all='ignore'):
            corr = np.atleast_2d(np.corrcoef(matrix, rowvar=False))
        return np.nan_to_num(np.abs(corr), nan=0.0)

    def adjacency(self, matrix) -> np.ndarray:
        """Thresholded |correlation| graph with self-loops, as 0/1 floats."""
        matrix = self._check(matrix)
        adj = (self.abs_correlation(matrix) >= self.threshold).astype(float)
        np.fill_diagonal(adj, 1.0)
        return adj

    @staticmethod
    def node_statistics(matrix: np.ndarray, target: Optional[np.ndarray] = None) -> np.ndarray:
        mean = matrix.mean(axis=0)
        std = matrix.std(axis=0)
        median = np.median(matrix, axis=0)
        safe_std = np.where(std > 0, std, 1.0)
        skew_proxy = np.where(std > 0, (mean - median) / safe_std, 0.0)
        if target is not None:
            with np.errstate(all='ignore'):
                joint = np.corrcoef(np.column_stack([matrix, np.asarray(target, dtype=float)]), rowvar=False)
            target_corr = np.nan_to_num(np.abs(joint[-1, :-1]), nan=0.0)
        else:
            target_corr = np.zeros(matrix.shape[1])
        stats = np.column_stack([mean, std, matrix.min(axis=0), matrix.max(axis=0), skew_proxy, target_corr])
        return _squash(stats)

    def node_embeddings(self, matrix, target: Optional[np.ndarray] = None) -> np.ndarray:
        """One row per column: ReLU(D^-1/2 A D^-1/2 X W)."""
        matrix = self._check(matrix)
        adj = self.adjacency(matrix)
        inv_sqrt = 1.0 / np.sqrt(adj.sum(axis=1))
        norm_adj = adj * inv_sqrt[:, None] * inv_sqrt[None, :]
        return np.maximum(norm_adj @ self.node_statistics(matrix, target) @ self.weight, 0.0)

    @staticmethod
    def pool(nodes: np.ndarray) -> np.ndarray:
        return nodes.mean(axis=0)

    def _projection(self, in_dim: int) -> np.ndarray:
        if in_dim not in self._projections:
            rng = np.random.default_rng([self.seed, in_dim])
            self._projections[in_dim] = rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(in_dim, self.d_state))
        return self._projections[in_dim]

    def project(self, pooled: np.ndarray, extra: Optional[np.ndarray] = None) -> np.ndarray:
        """Append context to a pooled state and map it back to d_state."""
        if extra is None or len(extra) == 0:
            return pooled
        joined = np.concatenate([pooled, np.asarray(extra, dtype=float).reshape(-1)])
        return joined @ self._projection(joined.shape[0])

    def state(self, matrix, extra: Optional[np.ndarray] = None,
              target: Optional[np.ndarray] = None) -> np.ndarray:
        return self.project(self.pool(self.node_embeddings(matrix, target)), extra)


def build_state(matrix, extra: Optional[np.ndarray] = None, target: Optional[np.ndarray] = None,
                seed: int = 0, d_state: int = 64, threshold: float = 0.3) -> np.ndarray:
    """Fixed-length state vector for a feature matrix (see FeatureGraphEmbedder)."""
    return FeatureGraphEmbedder(seed, d_state, threshold).state(matrix, extra, target)


def compute_reward(perf_t: float, perf_prev: float, beta_ib: float) -> float:
    """(1 - beta_IB) * (Perf_t - Perf_{t-1})"""
    return (1.0 - beta_ib) * (perf_t - perf_prev)


def _one_hot(index: int, size: int) -> np.ndarray:
    vec = np.zeros(size)
    vec[index] = 1.0
    return vec


def _scoring_names(n_columns: int) -> List[str]:
    return [f"c{i}" for i in range(n_columns)]


class TransformationSearch:
    """Episode loop for the three cascading agents."""

    def __init__(self, d: Dataset, cfg: SearchConfig, run_log: Optional[RunLog] = None):
        if d.n_features < 1:
            raise DataError("Search needs at least one feature column")
        self.d = d
        self.cfg = cfg
        self.run_log = run_log
        self.operators = operator_registry()
        self.embedder = FeatureGraphEmbedder(cfg.seed, cfg.d_state, cfg.corr_threshold)

        k = d.n_features
        n_ops = len(self.operators)
        if cfg.agent_policy == 'random':
            self.head = RandomAgent('head', k, cfg.seed)
            self.operator = RandomAgent('operator', n_ops, cfg.seed + 1)
            self.tail = RandomAgent('tail', k, cfg.seed + 2)
        else:
            self.head = DQNAgent('head', cfg.d_state, k, cfg, cfg.seed)
            self.operator = DQNAgent('operator', cfg.d_state, n_ops, cfg, cfg.seed + 1)
            self.tail = DQNAgent('tail', cfg.d_state, k, cfg, cfg.seed + 2)

        self.kb = KnowledgeBase()
        self.history: List[dict] = []
        self.global_step = 0
        self._baseline: Optional[float] = None

    @property
    def agents(self):
        return (self.head, self.operator, self.tail)

    def _fast_perf(self, matrix: np.ndarray) -> float:
        candidate = self.d.with_matrix(matrix, _scoring_names(matrix.shape[1]))
        return utility_score(candidate, seed=self.cfg.seed, learner=self.cfg.learner, fast=True)

    def baseline_perf(self) -> float:
        if self._baseline is None:
            self._baseline = self._fast_perf(self.d.matrix)
            logger.info(f"Baseline holdout utility: {self._baseline:.4f}")
        return self._baseline

    def _embed(self, matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        nodes = self.embedder.node_embeddings(matrix, self.d.target)
        return self.embedder.pool(nodes), nodes

    def _compose(self, slots: List[FeatureExpr], head: int, op, tail: Optional[int]) -> FeatureExpr:
        other = slots[tail] if tail is not None else None
        expr = slots[head].compose(op, other)
        if len(expr) > self.cfg.max_expr_tokens:
            # too deep: restart from the original columns
            other = FeatureExpr.of_feature(tail) if tail is not None else None
            expr = FeatureExpr.of_feature(head).compose(op, other)
        return expr

    def run_episode(self, episode: int) -> TransformationRecord:
        cfg = self.cfg
        k = self.d.n_features
        n_ops = len(self.operators)
        exprs = list(identity_sequence(k).exprs)
        slots = list(exprs)
        slot_columns = list(range(k))
        matrix = np.array(self.d.matrix, dtype=float)
        stats = EvaluationStats()

        perf_initial = perf_prev = self.baseline_perf()
        rewards = []
        for step in range(cfg.steps_per_episode):
            terminal = step == cfg.steps_per_episode - 1
            pooled, nodes = self._embed(matrix)

            s_head = pooled
            h = self.head.act(s_head)
            s_op = self.embedder.project(pooled, nodes[slot_columns[h]])
            o = self.operator.act(s_op)
            op = self.operators[o]

            t = None
            s_tail = None
            if op.arity == Arity.BINARY:
                s_tail = self.embedder.project(pooled, np.concatenate([nodes[slot_columns[h]], _one_hot(o, n_ops)]))
                t = self.tail.act(s_tail)

            new_expr = self._compose(slots, h, op, t)
            matrix = np.column_stack([matrix, evaluate(new_expr, self.d.matrix, stats)])
            exprs.append(new_expr)
            slots[h] = new_expr
            slot_columns[h] = matrix.shape[1] - 1

            perf = self._fast_perf(matrix)
            reward = compute_reward(perf, perf_prev, cfg.beta_ib)
            rewards.append(reward)
            perf_prev = perf

            # next states keep each agent's context on the grown feature set
            next_pooled, next_nodes = self._embed(matrix)
            head_context = next_nodes[slot_columns[h]]
            self.head.remember(Transition(s_head, h, reward, next_pooled, terminal))
            self.operator.remember(Transition(
                s_op, o, reward, self.embedder.project(next_pooled, head_context), terminal))
            if t is not None:
                self.tail.remember(Transition(
                    s_tail, t, reward,
                    self.embedder.project(next_pooled, np.concatenate([head_context, _one_hot(o, n_ops)])),
                    terminal))

            for agent in self.agents:
                agent.learn()
            self.global_step += 1
            if self.global_step % cfg.target_sync_interval == 0:
                for agent in self.agents:
                    agent.sync_target()

            logger.debug(
                f"Episode {episode} step {step}: {new_expr} perf={perf:.4f} reward={reward:+.4f}"
            )

        sequence = FeatureSetSequence(tuple(exprs))
        transformed = self.d.with_matrix(matrix, feature_names_for(sequence))
        utility = utility_score(transformed, seed=cfg.seed, learner=cfg.learner, n_folds=cfg.n_folds)
        privacy = privacy_score(transformed, seed=cfg.seed, learner=cfg.learner, n_folds=cfg.n_folds)
        if stats.non_finite:
            logger.warning(f"Episode {episode}: {stats.non_finite} non-finite values replaced by 0")

        record = TransformationRecord(
            tokens=serialize(sequence),
            utility=float(utility),
            privacy=float(privacy),
            dataset_id=self.d.dataset_id,
            episode=episode,
            step=cfg.steps_per_episode,
            timestamp=datetime.now().isoformat() if cfg.record_timestamps else None,
        )
        self.history.append({
            'episode': episode,
            'rewards': rewards,
            'perf_initial': perf_initial,
            'perf_final': perf_prev,
            'utility': record.utility,
            'privacy': record.privacy,
            'non_finite': stats.non_finite,
        })
        if self.run_log is not None:
            self.run_log.append(
                ScoreReport(
                    utility=record.utility,
                    privacy=record.privacy,
                    metric_names=('macro_f1' if self.d.is_classification else '1-rae', 'macro_f1'),
                    n_folds=cfg.n_folds,
                    seed=cfg.seed,
                    learner=cfg.learner,
                ),
                stage='search', episode=episode, tokens=record.tokens,
            )
        logger.info(
            f"Episode {episode}: utility={record.utility:.4f} privacy={record.privacy:.4f} "
            f"({len(sequence)} features)"
        )
        return record

    def run(self) -> KnowledgeBase:
        if self.cfg.episodes == 0:
            logger.warning("Search configured with 0 episodes; knowledge base will be empty")
        for episode in range(self.cfg.episodes):
            self.kb.append(self.run_episode(episode))
        if len(self.kb):
            best = self.kb.best()
            logger.info(f"Search finished: {len(self.kb)} records, best utility {best.utility:.4f}")
        return self.kb


def run_search(d: Dataset, cfg: SearchConfig, run_log: Optional[RunLog] = None) -> KnowledgeBase:
    return TransformationSearch(d, cfg, run_log).run()


def _depth1_utility(d: Dataset, sequence: FeatureSetSequence, seed: int, learner: str,
                    n_folds: int, fast: bool) -> float:
    columns = [evaluate(expr, d.matrix) for expr in sequence.exprs]
    transformed = d.with_matrix(np.column_stack(columns), feature_names_for(sequence))
    return utility_score(transformed, seed=seed, learner=learner, n_folds=n_folds, fast=fast, n_jobs=1)


def brute_force_depth1(d: Dataset, seed: int, learner: str = 'rf', n_folds: int = 5,
                       fast: bool = False, n_jobs: Optional[int] = None) -> List[Tuple[str, float]]:
    """
    Score every binary operator on every ordered pair of distinct columns,
    each appended to the passthrough features. Best first.
    """
    base = list(identity_sequence(d.n_features).exprs)
    candidates = []
    for op in operator_registry():
        if op.arity != Arity.BINARY:
            continue
        for i, j in permutations(range(d.n_features), 2):
            expr = FeatureExpr.of_feature(i).compose(op, FeatureExpr.of_feature(j))
            candidates.append(FeatureSetSequence(tuple(base + [expr])))

    n_jobs = n_jobs if n_jobs is not None else config.WORKERS
    scores = Parallel(n_jobs=n_jobs)(
        delayed(_depth1_utility)(d, seq, seed, learner, n_folds, fast) for seq in candidates
    )
    ranked = sorted(range(len(candidates)), key=lambda i: (-scores[i], i))
    return [(serialize(candidates[i]), float(scores[i])) for i in ranked]
