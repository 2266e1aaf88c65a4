#!/usr/bin/env python3
"""
Report emission: metrics table, privacy-utility scatter and feature/label
correlation heatmaps. Every row is recomputed from persisted artifacts.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import seaborn as sns  # noqa: E402

from data import Dataset  # noqa: E402
from evaluator import hsic, score_report  # noqa: E402
from expr import FeatureSetSequence, materialize, parse  # noqa: E402
from generator import latent_batch  # noqa: E402
from knowledge_base import KnowledgeBase  # noqa: E402
from trainer import load_checkpoint  # noqa: E402

logger = logging.getLogger(__name__)

VARIANTS = ('ORI', 'DELTA-P1', 'DELTA')
REPORT_FILE = 'report.csv'
TRADEOFF_PLOT = 'tradeoff.png'
HEATMAP_ORIGINAL = 'corr_original.png'
HEATMAP_GENERATED = 'corr_generated.png'
TIMINGS_FILE = 'timings.json'


@dataclass
class ReportRow:
    variant: str
    dt: float
    sf: float
    hsic: Optional[float] = None
    runtime_s: Optional[float] = None
    dt_linear: Optional[float] = None
    sf_linear: Optional[float] = None

    def __post_init__(self):
        for name in ('dt', 'sf'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{self.variant} {name.upper()} {value} outside [0, 1]")


@dataclass
class Report:
    rows: List[ReportRow] = field(default_factory=list)

    def row(self, variant: str) -> ReportRow:
        for row in self.rows:
            if row.variant == variant:
                return row
        raise KeyError(variant)

    def to_frame(self, include_runtime: bool = False) -> pd.DataFrame:
        records = []
        cross_model = any(row.dt_linear is not None for row in self.rows)
        for row in self.rows:
            entry = {'variant': row.variant, 'DT': row.dt, 'SF': row.sf, 'HSIC': row.hsic}
            if cross_model:
                entry['DT_linear'] = row.dt_linear
                entry['SF_linear'] = row.sf_linear
            if include_runtime:
                entry['runtime_s'] = row.runtime_s
            records.append(entry)
        return pd.DataFrame.from_records(records)


def read_tokens(path, n_features: int) -> FeatureSetSequence:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Token file not found: {path}")
    return parse(path.read_text(encoding='utf-8').strip(), n_features=n_features)


def read_timings(out_dir) -> Dict[str, float]:
    path = Path(out_dir) / TIMINGS_FILE
    if not path.is_file():
        return {}
    with open(path, 'r', encoding='utf-8') as handle:
        return json.load(handle)


def _score_row(variant: str, d: Dataset, seed: int, learner: str, n_folds: int,
               cross_model: bool, runtime_s: Optional[float] = None) -> ReportRow:
    scores = score_report(d, seed=seed, learner=learner, n_folds=n_folds)
    row = ReportRow(variant=variant, dt=scores.utility, sf=scores.privacy, runtime_s=runtime_s)
    if cross_model:
        other = 'linear' if learner == 'rf' else 'rf'
        linear = score_report(d, seed=seed, learner=other, n_folds=n_folds)
        row.dt_linear = linear.utility
        row.sf_linear = linear.privacy
    logger.info(f"{variant}: DT={row.dt:.4f} SF={row.sf:.4f}")
    return row


def model_hsic(model_dir, kb: KnowledgeBase) -> Optional[float]:
    """HSIC between the utility and privacy halves of the kb posterior means."""
    if len(kb) < 4:
        logger.warning(f"HSIC needs at least 4 records, knowledge base has {len(kb)}")
        return None
    model, vocab, _ = load_checkpoint(model_dir)
    z_u, z_p = latent_batch(model, vocab, kb)
    return hsic(z_u, z_p)


def build_report(d: Dataset, kb: KnowledgeBase, tokens_path=None, model_dir=None,
                 seed: int = 42, learner: str = 'rf', n_folds: int = 5,
                 cross_model: bool = False, timings: Optional[Dict[str, float]] = None) -> Report:
    timings = timings or {}
    report = Report()
    report.rows.append(_score_row('ORI', d, seed, learner, n_folds, cross_model))

    if len(kb):
        best = materialize(kb.best().sequence, d)
        report.rows.append(_score_row('DELTA-P1', best, seed, learner, n_folds, cross_model,
                                      runtime_s=timings.get('search')))
    else:
        logger.warning("Knowledge base is empty; DELTA-P1 row skipped")

    if tokens_path is not None:
        generated = materialize(read_tokens(tokens_path, d.n_features), d)
        stages = [timings[k] for k in ('search', 'train', 'generate') if k in timings]
        row = _score_row('DELTA', generated, seed, learner, n_folds, cross_model,
                         runtime_s=sum(stages) if stages else None)
        if model_dir is not None:
            row.hsic = model_hsic(model_dir, kb)
        report.rows.append(row)
    return report


def write_table(report: Report, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    report.to_frame().to_csv(path, index=False, float_format='%.6f', na_rep='')
    return path


def plot_tradeoff(report: Report, path) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 5))
    for row in report.rows:
        ax.scatter(row.sf, row.dt, s=80)
        ax.annotate(row.variant, (row.sf, row.dt), textcoords='offset points', xytext=(6, 6))
    ax.set_xlabel('SF (sensitive-attribute F1, lower is better)')
    ax.set_ylabel('DT (downstream task score)')
    ax.set_title('Privacy-utility trade-off')
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150, bbox_inches='tight')
    plt.close(fig)
    return path


def label_correlations(d: Dataset) -> pd.DataFrame:
    """|Pearson r| of each feature with the target and with the sensitive attribute."""
    rows = {}
    target = np.asarray(d.target, dtype=float)
    sensitive = np.asarray(d.sensitive, dtype=float)
    with np.errstate(all='ignore'):
        for j, name in enumerate(d.feature_names):
            column = d.matrix[:, j]
            rows[name] = [abs(np.corrcoef(column, target)[0, 1]), abs(np.corrcoef(column, sensitive)[0, 1])]
    frame = pd.DataFrame.from_dict(rows, orient='index', columns=['target', 'sensitive'])
    return frame.fillna(0.0)


def plot_correlation_heatmap(d: Dataset, path, title: str) -> Path:
    path = Path(path)
    frame = label_correlations(d)
    fig, ax = plt.subplots(figsize=(5, max(3, 0.35 * len(frame) + 1)))
    sns.heatmap(frame, annot=len(frame) <= 40, fmt='.2f', cmap='rocket_r', vmin=0, vmax=1,
                linewidths=0.5, cbar_kws={'shrink': 0.8}, ax=ax)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150, bbox_inches='tight')
    plt.close(fig)
    return path


def write_report(report: Report, d: Dataset, out_dir, tokens_path=None) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        'table': write_table(report, out_dir / REPORT_FILE),
        'tradeoff': plot_tradeoff(report, out_dir / TRADEOFF_PLOT),
        'corr_original': plot_correlation_heatmap(d, out_dir / HEATMAP_ORIGINAL, 'Original features'),
    }
    if tokens_path is not None:
        generated = materialize(read_tokens(tokens_path, d.n_features), d)
        paths['corr_generated'] = plot_correlation_heatmap(
            generated, out_dir / HEATMAP_GENERATED, 'Generated features')
    logger.info(f"Report written to {out_dir}")
    return paths
