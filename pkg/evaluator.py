#!/usr/bin/env python3
"""
Utility, privacy-leakage and disentanglement scoring.

Utility is the cross-validated predictability of the target, privacy is the
cross-validated predictability of the sensitive attribute (lower is better),
and HSIC measures dependence between two batches of latent vectors.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime
from functools import lru_cache
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.spatial.distance import pdist, squareform
from sklearn.ensemble import RandomForestClassifier, RandomForestRegressor
from sklearn.linear_model import LogisticRegression, Ridge
from sklearn.metrics import accuracy_score, f1_score
from sklearn.model_selection import KFold, StratifiedKFold, cross_val_predict
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

import config
from data import Dataset, split_dataset
from errors import DegenerateLabelError

logger = logging.getLogger(__name__)

LEARNERS = ('rf', 'linear')
N_TREES = 100
HOLDOUT_FRACTION = 0.2


@dataclass
class ScoreReport:
    utility: float
    privacy: float
    metric_names: Tuple[str, str]
    n_folds: int
    seed: int
    learner: str = 'rf'
    extra: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name in ('utility', 'privacy'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} score {value} outside [0, 1]")

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload['metric_names'] = list(self.metric_names)
        return payload

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def one_minus_rae(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """1 - sum|y - y_hat| / sum|y - mean(y)|, clipped to [0, 1]."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    denominator = np.abs(y_true - y_true.mean()).sum()
    if denominator == 0:
        return 0.0
    rae = np.abs(y_true - y_pred).sum() / denominator
    return float(np.clip(1.0 - rae, 0.0, 1.0))


def _column_order(matrix: np.ndarray) -> list:
    """Content-based column order so scores do not depend on column order."""
    return sorted(range(matrix.shape[1]), key=lambda j: matrix[:, j].tobytes())


def _make_learner(classification: bool, learner: str, seed: int, n_jobs: Optional[int]):
    if learner not in LEARNERS:
        raise ValueError(f"Unknown learner '{learner}' (expected one of {LEARNERS})")
    n_jobs = n_jobs if n_jobs is not None else config.WORKERS
    if learner == 'rf':
        model_cls = RandomForestClassifier if classification else RandomForestRegressor
        return model_cls(n_estimators=N_TREES, max_depth=None, random_state=seed, n_jobs=n_jobs)
    if classification:
        return make_pipeline(StandardScaler(), LogisticRegression(max_iter=1000))
    return make_pipeline(StandardScaler(), Ridge(alpha=1.0))


def _score_predictions(classification: bool, y_true, y_pred) -> Tuple[float, float]:
    """(primary score, accuracy or NaN)."""
    if classification:
        return (
            float(f1_score(y_true, y_pred, average='macro')),
            float(accuracy_score(y_true, y_pred)),
        )
    return one_minus_rae(y_true, y_pred), float('nan')


def _cross_validated(matrix: np.ndarray, labels: np.ndarray, classification: bool,
                     seed: int, learner: str, n_folds: int,
                     n_jobs: Optional[int]) -> Tuple[float, float]:
    matrix = matrix[:, _column_order(matrix)]
    if classification:
        _, counts = np.unique(labels, return_counts=True)
        if counts.min() >= 2:
            splitter = StratifiedKFold(n_splits=max(2, min(n_folds, counts.min())),
                                       shuffle=True, random_state=seed)
        else:
            splitter = KFold(n_splits=min(n_folds, len(labels)), shuffle=True, random_state=seed)
    else:
        splitter = KFold(n_splits=min(n_folds, len(labels)), shuffle=True, random_state=seed)
    model = _make_learner(classification, learner, seed, n_jobs)
    predictions = cross_val_predict(model, matrix, labels, cv=splitter)
    return _score_predictions(classification, labels, predictions)


@lru_cache(maxsize=64)
def _holdout_indices(dataset_id: str, label_bytes: bytes, label_dtype: str,
                     classification: bool, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Train/test rows for the fast score. The split only depends on the labels
    and the seed, so a search reuses one split (and logs its warnings once).
    """
    labels = np.frombuffer(label_bytes, dtype=label_dtype)
    # the split stratifies on whichever label is being predicted
    proxy = Dataset(np.zeros((len(labels), 1)), ('row',), labels, labels,
                    'classification' if classification else 'regression', dataset_id)
    split = split_dataset(proxy, HOLDOUT_FRACTION, seed)
    return split.train_indices, split.test_indices


def _holdout(d: Dataset, labels: np.ndarray, classification: bool, seed: int,
             learner: str, n_jobs: Optional[int]) -> Tuple[float, float]:
    labels = np.ascontiguousarray(labels)
    train_idx, test_idx = _holdout_indices(d.dataset_id, labels.tobytes(), labels.dtype.str,
                                           classification, seed)
    order = _column_order(d.matrix)
    model = _make_learner(classification, learner, seed, n_jobs)
    model.fit(d.matrix[train_idx][:, order], labels[train_idx])
    predictions = model.predict(d.matrix[test_idx][:, order])
    return _score_predictions(classification, labels[test_idx], predictions)


def _label_score(d: Dataset, labels: np.ndarray, classification: bool, seed: int,
                 learner: str, n_folds: int, fast: bool,
                 n_jobs: Optional[int]) -> Tuple[float, float]:
    if fast:
        return _holdout(d, labels, classification, seed, learner, n_jobs)
    return _cross_validated(d.matrix, labels, classification, seed, learner, n_folds, n_jobs)


def utility_score(d: Dataset, seed: int, learner: str = 'rf', n_folds: int = 5,
                  fast: bool = False, n_jobs: Optional[int] = None) -> float:
    """
    Target predictability: macro-F1 for classification, 1-RAE for regression.

    fast=True swaps cross-validation for a single stratified 80/20 holdout.
    """
    return _utility(d, seed, learner, n_folds, fast, n_jobs)[0]


def _utility(d, seed, learner, n_folds, fast, n_jobs) -> Tuple[float, float]:
    if d.n_rows == 0:
        raise ValueError("Cannot score an empty dataset")
    if d.is_classification and len(np.unique(d.target)) < 2:
        raise DegenerateLabelError(f"Target of {d.dataset_id} has a single class")
    return _label_score(d, d.target, d.is_classification, seed, learner, n_folds, fast, n_jobs)


def privacy_score(d: Dataset, seed: int, learner: str = 'rf', n_folds: int = 5,
                  fast: bool = False, n_jobs: Optional[int] = None) -> float:
    """Sensitive-attribute predictability (macro-F1); 0 when the attribute has one class."""
    return _privacy(d, seed, learner, n_folds, fast, n_jobs)[0]


def _privacy(d, seed, learner, n_folds, fast, n_jobs) -> Tuple[float, float]:
    if len(np.unique(d.sensitive)) < 2:
        logger.warning(f"Sensitive attribute of {d.dataset_id} has a single class; privacy score is 0")
        return 0.0, float('nan')
    return _label_score(d, d.sensitive, True, seed, learner, n_folds, fast, n_jobs)


def score_report(d: Dataset, seed: int, learner: str = 'rf', n_folds: int = 5,
                 fast: bool = False, n_jobs: Optional[int] = None) -> ScoreReport:
    """Both scores plus accuracies, ready for the run log."""
    utility, utility_acc = _utility(d, seed, learner, n_folds, fast, n_jobs)
    privacy, privacy_acc = _privacy(d, seed, learner, n_folds, fast, n_jobs)
    extra = {}
    if not np.isnan(utility_acc):
        extra['utility_accuracy'] = utility_acc
    if not np.isnan(privacy_acc):
        extra['privacy_accuracy'] = privacy_acc
    utility_metric = 'macro_f1' if d.is_classification else '1-rae'
    return ScoreReport(
        utility=utility,
        privacy=privacy,
        metric_names=(utility_metric, 'macro_f1'),
        n_folds=1 if fast else n_folds,
        seed=seed,
        learner=learner,
        extra=extra,
    )


def _median_bandwidth(x: np.ndarray) -> float:
    distances = pdist(x)
    median = float(np.median(distances)) if distances.size else 0.0
    return median if median > 0 else 1.0


def _gaussian_gram(x: np.ndarray) -> np.ndarray:
    sigma = _median_bandwidth(x)
    squared = squareform(pdist(x, 'sqeuclidean'))
    return np.exp(-squared / (2.0 * sigma ** 2))


def hsic(a, b) -> float:
    """
    Biased empirical HSIC with Gaussian kernels and median-heuristic bandwidths:
    trace(K H L H) / (n - 1)^2.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if b.ndim == 1:
        b = b.reshape(-1, 1)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"Batch sizes differ: {a.shape[0]} vs {b.shape[0]}")
    n = a.shape[0]
    if n < 4:
        raise ValueError(f"HSIC needs at least 4 samples, got {n}")

    K = _gaussian_gram(a)
    L = _gaussian_gram(b)
    H = np.eye(n) - np.full((n, n), 1.0 / n)
    value = np.trace(K @ H @ L @ H) / (n - 1) ** 2
    return float(max(value, 0.0))


class RunLog:
    """Line-delimited JSON log with one object per evaluation."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, report: ScoreReport, **context) -> None:
        entry = {'timestamp': datetime.now().isoformat(), **context, **report.to_dict()}
        with open(self.path, 'a', encoding='utf-8') as handle:
            handle.write(json.dumps(entry, sort_keys=True) + '\n')
        logger.debug(f"Logged evaluation to {self.path}")
