"""
Knowledge base of scored transformation sequences collected by the search.
Persists as line-delimited JSON, one record per line.
"""

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Any

from errors import DataError, ExpressionError
from expr import FeatureSetSequence, parse

logger = logging.getLogger(__name__)

RECORD_KEYS = ('tokens', 'utility', 'privacy', 'dataset_id', 'episode', 'step', 'timestamp')


@dataclass(frozen=True)
class TransformationRecord:
    tokens: str
    utility: float
    privacy: float
    dataset_id: str
    episode: int
    step: int
    timestamp: Optional[str] = None

    def __post_init__(self):
        for name in ('utility', 'privacy'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise DataError(f"Record {name} score {value} outside [0, 1]")
        # raises ExpressionError subclasses for bad token strings
        parse(self.tokens)

    @property
    def sequence(self) -> FeatureSetSequence:
        return parse(self.tokens)

    def to_dict(self) -> Dict[str, Any]:
        return {key: getattr(self, key) for key in RECORD_KEYS}

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "TransformationRecord":
        missing = [key for key in RECORD_KEYS[:-1] if key not in payload]
        if missing:
            raise DataError(f"Record is missing keys: {', '.join(missing)}")
        return cls(
            tokens=payload['tokens'],
            utility=float(payload['utility']),
            privacy=float(payload['privacy']),
            dataset_id=str(payload['dataset_id']),
            episode=int(payload['episode']),
            step=int(payload['step']),
            timestamp=payload.get('timestamp'),
        )


class KnowledgeBase:
    """Ordered collection of TransformationRecords."""

    def __init__(self, records: Optional[List[TransformationRecord]] = None):
        self.records: List[TransformationRecord] = list(records or [])

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TransformationRecord]:
        return iter(self.records)

    def __getitem__(self, index: int) -> TransformationRecord:
        return self.records[index]

    def append(self, record: TransformationRecord) -> None:
        self.records.append(record)

    def top_by_utility(self, n: int) -> List[TransformationRecord]:
        """Highest utility first; ties keep insertion order."""
        ranked = sorted(range(len(self.records)), key=lambda i: (-self.records[i].utility, i))
        return [self.records[i] for i in ranked[:max(n, 0)]]

    def best(self) -> TransformationRecord:
        if not self.records:
            raise DataError("Knowledge base is empty")
        return self.top_by_utility(1)[0]

    def max_feature_index(self) -> int:
        """Largest feature reference across all records, -1 when empty."""
        indices = [r.sequence.max_feature_index for r in self.records]
        return max(indices) if indices else -1

    def save(self, path) -> None:
        path = Path(path)
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        tmp_path = path.with_suffix(path.suffix + '.tmp')
        with open(tmp_path, 'w', encoding='utf-8') as handle:
            for record in self.records:
                handle.write(json.dumps(record.to_dict()) + '\n')
        os.replace(tmp_path, path)
        logger.info(f"Saved {len(self.records)} records to {path}")

    @classmethod
    def load(cls, path) -> "KnowledgeBase":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"Knowledge base not found: {path}")
        records = []
        with open(path, 'r', encoding='utf-8') as handle:
            for line_number, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    records.append(TransformationRecord.from_dict(json.loads(line)))
                except json.JSONDecodeError as e:
                    raise DataError(f"{path.name}:{line_number}: invalid JSON ({e})")
                except ExpressionError as e:
                    raise DataError(f"{path.name}:{line_number}: invalid tokens ({e})")
        logger.info(f"Loaded {len(records)} records from {path}")
        return cls(records)
