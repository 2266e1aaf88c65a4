"""
Tabular dataset loading and splitting.
Holds the feature matrix together with the target and sensitive attributes.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.model_selection import train_test_split

from errors import DegenerateLabelError, EmptyDataError, SchemaError

logger = logging.getLogger(__name__)


class TaskKind(str, Enum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"

    @classmethod
    def from_flag(cls, value) -> "TaskKind":
        """Accept the CLI spellings (clf/reg) as well as the full names."""
        if isinstance(value, TaskKind):
            return value
        aliases = {
            'clf': cls.CLASSIFICATION,
            'classification': cls.CLASSIFICATION,
            'reg': cls.REGRESSION,
            'regression': cls.REGRESSION,
        }
        try:
            return aliases[str(value).strip().lower()]
        except KeyError:
            raise ValueError(f"Unknown task kind: {value!r} (expected clf or reg)")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable feature matrix with target and sensitive labels."""

    matrix: np.ndarray
    feature_names: Tuple[str, ...]
    target: np.ndarray
    sensitive: np.ndarray
    task_kind: TaskKind
    dataset_id: str = "dataset"

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=float)
        if matrix.ndim != 2:
            raise SchemaError(f"Feature matrix must be 2-D, got shape {matrix.shape}")
        target = np.array(self.target)
        sensitive = np.array(self.sensitive)
        names = tuple(str(name) for name in self.feature_names)

        if len(target) != matrix.shape[0] or len(sensitive) != matrix.shape[0]:
            raise SchemaError(
                f"Row count mismatch: matrix={matrix.shape[0]}, "
                f"target={len(target)}, sensitive={len(sensitive)}"
            )
        if len(names) != matrix.shape[1]:
            raise SchemaError(f"{len(names)} feature names for {matrix.shape[1]} columns")
        if len(set(names)) != len(names):
            raise SchemaError("Feature names must be unique")

        for array in (matrix, target, sensitive):
            array.setflags(write=False)
        object.__setattr__(self, 'matrix', matrix)
        object.__setattr__(self, 'target', target)
        object.__setattr__(self, 'sensitive', sensitive)
        object.__setattr__(self, 'feature_names', names)
        object.__setattr__(self, 'task_kind', TaskKind.from_flag(self.task_kind))

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_features(self) -> int:
        return self.matrix.shape[1]

    @property
    def is_classification(self) -> bool:
        return self.task_kind == TaskKind.CLASSIFICATION

    def with_matrix(self, matrix: np.ndarray, feature_names: Sequence[str]) -> "Dataset":
        """Same labels and task, new feature columns."""
        return Dataset(
            matrix=matrix,
            feature_names=tuple(feature_names),
            target=self.target,
            sensitive=self.sensitive,
            task_kind=self.task_kind,
            dataset_id=self.dataset_id,
        )

    def subset(self, indices: Sequence[int]) -> "Dataset":
        """Rows selected by integer index."""
        indices = np.asarray(indices, dtype=int)
        return Dataset(
            matrix=self.matrix[indices],
            feature_names=self.feature_names,
            target=self.target[indices],
            sensitive=self.sensitive[indices],
            task_kind=self.task_kind,
            dataset_id=self.dataset_id,
        )


@dataclass(frozen=True, eq=False)
class SplitPair:
    train: Dataset
    test: Dataset
    seed: int
    train_indices: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))
    test_indices: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))


def _encode_labels(series: pd.Series) -> np.ndarray:
    """Map labels to integer codes 0..C-1 in sorted order of their string form."""
    as_text = series.astype(str)
    categories = sorted(as_text.unique())
    return pd.Categorical(as_text, categories=categories).codes.astype(int)


def _encode_feature(series: pd.Series) -> pd.Series:
    """Numeric columns pass through; anything else becomes stable integer codes."""
    if pd.api.types.is_numeric_dtype(series) and not pd.api.types.is_bool_dtype(series):
        return series.astype(float)
    present = series.dropna().astype(str)
    categories = sorted(present.unique())
    codes = pd.Categorical(series.where(series.isna(), series.astype(str)),
                           categories=categories).codes.astype(float)
    codes[codes < 0] = np.nan
    return pd.Series(codes, index=series.index, name=series.name)


def load_dataset(path, target_col: str, sensitive_col: str, task_kind,
                 delimiter: str = ",", dataset_id: Optional[str] = None) -> Dataset:
    """
    Load a delimiter-separated file with a header row.

    Rows with a missing target or sensitive value are dropped, non-numeric
    feature columns are label-encoded and missing feature cells are filled
    with the column median.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Data file not found: {path}")
    task_kind = TaskKind.from_flag(task_kind)

    frame = pd.read_csv(path, sep=delimiter, encoding='utf-8')
    frame.columns = [str(col).strip() for col in frame.columns]
    missing = [col for col in (target_col, sensitive_col) if col not in frame.columns]
    if missing:
        raise SchemaError(f"Columns not found in {path.name}: {', '.join(missing)}")
    if target_col == sensitive_col:
        raise SchemaError("Target and sensitive columns must differ")

    before = len(frame)
    frame = frame.dropna(subset=[target_col, sensitive_col]).reset_index(drop=True)
    if len(frame) < before:
        logger.info(f"Dropped {before - len(frame)} rows with missing target or sensitive value")
    if frame.empty:
        raise EmptyDataError(f"No rows left in {path.name} after dropping missing labels")

    features = frame.drop(columns=[target_col, sensitive_col])
    encoded = {}
    for col in features.columns:
        column = _encode_feature(features[col])
        if column.isna().any():
            median = column.median()
            column = column.fillna(0.0 if pd.isna(median) else median)
        encoded[col] = column.to_numpy(dtype=float)

    if task_kind == TaskKind.CLASSIFICATION:
        target = _encode_labels(frame[target_col])
        if len(np.unique(target)) < 2:
            raise DegenerateLabelError(f"Target column '{target_col}' has a single class")
    else:
        if not pd.api.types.is_numeric_dtype(frame[target_col]):
            raise SchemaError(f"Regression target '{target_col}' is not numeric")
        target = frame[target_col].to_numpy(dtype=float)

    sensitive = _encode_labels(frame[sensitive_col])
    names = list(features.columns)
    matrix = np.column_stack([encoded[col] for col in names]) if names else np.empty((len(frame), 0))

    dataset = Dataset(
        matrix=matrix,
        feature_names=tuple(names),
        target=target,
        sensitive=sensitive,
        task_kind=task_kind,
        dataset_id=dataset_id or path.stem,
    )
    logger.info(
        f"Loaded {dataset.dataset_id}: {dataset.n_rows} rows, {dataset.n_features} features "
        f"(target={target_col}, sensitive={sensitive_col}, task={task_kind.value})"
    )
    return dataset


def split_dataset(d: Dataset, test_fraction: float, seed: int) -> SplitPair:
    """
    Deterministic train/test split.

    Classification splits are stratified on the target when every class has
    at least two members and both parts can hold every class.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n_rows = d.n_rows
    n_test = math.ceil(test_fraction * n_rows)
    n_train = n_rows - n_test
    if n_test < 1 or n_train < 1:
        raise ValueError(
            f"test_fraction {test_fraction} on {n_rows} rows leaves "
            f"{n_train} train / {n_test} test rows"
        )

    stratify = None
    if d.is_classification:
        _, counts = np.unique(d.target, return_counts=True)
        n_classes = len(counts)
        if counts.min() >= 2 and n_test >= n_classes and n_train >= n_classes:
            stratify = d.target
        else:
            logger.warning(
                f"Unstratified split for {d.dataset_id}: smallest class has {counts.min()} "
                f"members, {n_classes} classes, {n_test} test rows"
            )

    train_idx, test_idx = train_test_split(
        np.arange(n_rows), test_size=n_test, random_state=seed, stratify=stratify
    )
    train_idx = np.sort(train_idx)
    test_idx = np.sort(test_idx)
    return SplitPair(
        train=d.subset(train_idx),
        test=d.subset(test_idx),
        seed=seed,
        train_indices=train_idx,
        test_indices=test_idx,
    )
