#!/usr/bin/env python3
"""
Privacy-aware feature transformation pipeline.

Phase I searches feature transformations with cascading DQN agents and
stores a scored knowledge base; Phase II trains a disentangled sequence VAE
on it and generates a feature set that keeps target utility while leaking
less about the sensitive attribute.

Usage:
    python delta.py search   --data credit.csv --target class --sensitive famges --out runs/kb.jsonl
    python delta.py train    --kb runs/kb.jsonl --out runs/model
    python delta.py generate --model runs/model --data credit.csv ... --out runs/features.tokens
    python delta.py evaluate --data credit.csv ... --tokens runs/features.tokens
    python delta.py report   --kb runs/kb.jsonl --model runs/model --tokens runs/features.tokens --data ... --out runs
    python delta.py run-all  --config run.yaml
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import config
from config import RunConfig, apply_overrides, ensure_valid, get_config_summary, load_run_config
from data import Dataset, load_dataset
from errors import EXIT_EMPTY_OUTPUT, EXIT_OK, ConfigError, exit_code_for
from evaluator import RunLog, score_report
from expr import identity_sequence, materialize
from generator import generate
from knowledge_base import KnowledgeBase
from report import TIMINGS_FILE, build_report, read_timings, read_tokens, write_report
from search import run_search
from trainer import TRAINING_LOG_FILE, load_checkpoint, save_checkpoint, train

logger = logging.getLogger('delta')

KB_FILE = 'kb.jsonl'
MODEL_DIR = 'model'
TOKENS_FILE = 'features.tokens'
RUN_LOG_FILE = 'run_log.jsonl'

# flag dest -> RunConfig override key
OVERRIDES = {
    'seed': 'seed',
    'data': 'data.path',
    'target': 'data.target',
    'sensitive': 'data.sensitive',
    'task': 'data.task',
    'delimiter': 'data.delimiter',
    'episodes': 'search.episodes',
    'steps': 'search.steps_per_episode',
    'beta_ib': 'search.beta_ib',
    'policy': 'search.agent_policy',
    'timestamps': 'search.record_timestamps',
    'epochs': 'model.epochs',
    'lambda_dis': 'model.lambda_dis',
    'lambda_causal': 'model.lambda_causal',
    'use_adversarial': 'model.use_adversarial',
    'use_disentangle': 'model.use_disentangle',
    'use_causal': 'model.use_causal',
    'n_candidates': 'n_candidates',
    'selection_lambda': 'selection_lambda',
    'cross_model': 'cross_model',
    'output_dir': 'output_dir',
}


def configure_logging(log_dir=None, level=None):
    handlers = [logging.StreamHandler()]
    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        handlers.insert(0, logging.FileHandler(log_dir / config.LOG_FILE))
    logging.basicConfig(
        level=level or config.LOG_LEVEL,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def resolve_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if getattr(args, 'config', None) else RunConfig()
    overrides = {key: getattr(args, dest) for dest, key in OVERRIDES.items() if hasattr(args, dest)}
    learner = getattr(args, 'learner', None)
    if learner is not None:
        overrides['learner'] = learner
        overrides['search.learner'] = learner
    return apply_overrides(cfg, overrides)


def load_configured_dataset(cfg: RunConfig) -> Dataset:
    missing = [name for name in ('path', 'target', 'sensitive') if not getattr(cfg.data, name)]
    if missing:
        raise ConfigError(f"Missing data settings: {', '.join('data.' + m for m in missing)}")
    return load_dataset(cfg.data.path, cfg.data.target, cfg.data.sensitive, cfg.data.task,
                        delimiter=cfg.data.delimiter)


def cmd_search(cfg: RunConfig, kb_path) -> int:
    kb_path = Path(kb_path)
    d = load_configured_dataset(cfg)
    run_log = RunLog(kb_path.parent / RUN_LOG_FILE)
    kb = run_search(d, cfg.search, run_log=run_log)
    kb.save(kb_path)
    if len(kb) == 0:
        print(f"⚠ No episodes run; wrote empty knowledge base to {kb_path}")
        return EXIT_EMPTY_OUTPUT
    best = kb.best()
    print(f"✓ {len(kb)} records written to {kb_path}")
    print(f"  Best utility {best.utility:.4f} (privacy {best.privacy:.4f}) in episode {best.episode}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, kb_path, model_dir) -> int:
    model_dir = Path(model_dir)
    kb = KnowledgeBase.load(kb_path)
    n_features = load_configured_dataset(cfg).n_features if cfg.data.path else None
    result = train(kb, cfg.model, n_features=n_features, log_path=model_dir / TRAINING_LOG_FILE)
    save_checkpoint(result, model_dir, kb_path=str(kb_path))
    final = result.log[-1] if result.log else {}
    print(f"✓ Model saved to {model_dir}")
    if final:
        print(f"  Final epoch total loss {final['total']:.4f} (recon {final['recon']:.4f})")
    return EXIT_OK


def cmd_generate(cfg: RunConfig, model_dir, tokens_path, kb_path=None) -> int:
    tokens_path = Path(tokens_path)
    model, vocab, manifest = load_checkpoint(model_dir)
    kb_path = kb_path or manifest.get('kb_path')
    if not kb_path:
        raise ConfigError("No knowledge base given and none recorded in the model manifest")
    kb = KnowledgeBase.load(kb_path)
    d = load_configured_dataset(cfg)
    result = generate(model, vocab, kb, d, n_candidates=cfg.n_candidates,
                      selection_lambda=cfg.selection_lambda, seed=cfg.seed, learner=cfg.learner)
    tokens_path.parent.mkdir(parents=True, exist_ok=True)
    tokens_path.write_text(result.tokens + '\n', encoding='utf-8')
    RunLog(tokens_path.parent / RUN_LOG_FILE).append(result.report, stage='generate', tokens=result.tokens)
    print(f"✓ Generated {len(result.sequence)} features from {len(result.candidates)} candidates")
    print(f"  Utility {result.report.utility:.4f}, privacy {result.report.privacy:.4f} -> {tokens_path}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, tokens_path=None, out_path=None) -> int:
    d = load_configured_dataset(cfg)
    sequence = read_tokens(tokens_path, d.n_features) if tokens_path else identity_sequence(d.n_features)
    report = score_report(materialize(sequence, d), seed=cfg.seed, learner=cfg.learner)
    print(report.to_json())
    if out_path:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(report.to_json() + '\n', encoding='utf-8')
    return EXIT_OK


def cmd_report(cfg: RunConfig, kb_path, out_dir, model_dir=None, tokens_path=None) -> int:
    d = load_configured_dataset(cfg)
    kb = KnowledgeBase.load(kb_path)
    report = build_report(d, kb, tokens_path=tokens_path, model_dir=model_dir, seed=cfg.seed,
                          learner=cfg.learner, cross_model=cfg.cross_model,
                          timings=read_timings(out_dir))
    paths = write_report(report, d, out_dir, tokens_path=tokens_path)
    print(report.to_frame(include_runtime=True).to_string(index=False))
    for name, path in paths.items():
        print(f"  {name}: {path}")
    return EXIT_OK


def _write_timings(out_dir: Path, timings: dict) -> None:
    with open(out_dir / TIMINGS_FILE, 'w', encoding='utf-8') as handle:
        json.dump(timings, handle, indent=2, sort_keys=True)


def cmd_run_all(cfg: RunConfig) -> int:
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kb_path = out_dir / KB_FILE
    model_dir = out_dir / MODEL_DIR
    tokens_path = out_dir / TOKENS_FILE
    timings = {}

    start = time.perf_counter()
    status = cmd_search(cfg, kb_path)
    timings['search'] = time.perf_counter() - start
    _write_timings(out_dir, timings)
    if status != EXIT_OK:
        return status

    for stage, run in (
        ('train', lambda: cmd_train(cfg, kb_path, model_dir)),
        ('generate', lambda: cmd_generate(cfg, model_dir, tokens_path, kb_path=str(kb_path))),
    ):
        start = time.perf_counter()
        status = run()
        timings[stage] = time.perf_counter() - start
        _write_timings(out_dir, timings)
        if status != EXIT_OK:
            return status

    return cmd_report(cfg, kb_path, out_dir, model_dir=model_dir, tokens_path=tokens_path)


def _add_data_args(parser):
    parser.add_argument('--data', help='Delimiter-separated data file with a header row')
    parser.add_argument('--target', help='Target column name')
    parser.add_argument('--sensitive', help='Sensitive column name')
    parser.add_argument('--task', choices=['clf', 'reg'], help='Task type (default: clf)')
    parser.add_argument('--delimiter', help='Field delimiter (default: ,)')


def _add_common_args(parser):
    parser.add_argument('--config', help='YAML run configuration; flags override its values')
    parser.add_argument('--seed', type=int, help=f'Random seed (default: {config.SEED})')
    parser.add_argument('--learner', choices=list(config.LEARNER_CHOICES), help='Downstream learner')
    parser.add_argument('--log-level', help=f'Logging level (default: {config.LOG_LEVEL})')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Privacy-aware feature transformation pipeline')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('search', help='Phase I: build the transformation knowledge base')
    _add_common_args(p)
    _add_data_args(p)
    p.add_argument('--episodes', type=int, help='Number of episodes')
    p.add_argument('--steps', type=int, help='Generated features per episode')
    p.add_argument('--beta-ib', dest='beta_ib', type=float, help='Reward scaling beta_IB in [0, 1)')
    p.add_argument('--policy', choices=list(config.AGENT_POLICIES), help='dqn (default) or random agents')
    p.add_argument('--timestamps', action='store_true', default=None, help='Record wall-clock timestamps')
    p.add_argument('--out', required=True, help='Knowledge base output file (.jsonl)')

    p = sub.add_parser('train', help='Phase II: train the disentangled sequence model')
    _add_common_args(p)
    _add_data_args(p)
    p.add_argument('--kb', required=True, help='Knowledge base file')
    p.add_argument('--epochs', type=int, help='Training epochs')
    p.add_argument('--lambda-dis', dest='lambda_dis', type=float, help='Disentanglement weight')
    p.add_argument('--lambda-causal', dest='lambda_causal', type=float, help='Causal regularization weight')
    p.add_argument('--no-adversarial', dest='use_adversarial', action='store_const', const=False,
                   help='Drop the adversarial terms')
    p.add_argument('--no-disentangle', dest='use_disentangle', action='store_const', const=False,
                   help='Drop the head and covariance terms')
    p.add_argument('--no-causal', dest='use_causal', action='store_const', const=False,
                   help='Drop the causal regularization term')
    p.add_argument('--out', required=True, help='Model output directory')

    p = sub.add_parser('generate', help='Generate a privacy-aware feature set')
    _add_common_args(p)
    _add_data_args(p)
    p.add_argument('--model', required=True, help='Model directory')
    p.add_argument('--kb', help='Knowledge base file (default: the one recorded at training)')
    p.add_argument('--n-candidates', dest='n_candidates', type=int, help='Seed records to decode')
    p.add_argument('--lambda', dest='selection_lambda', type=float, help='Privacy weight in the selector')
    p.add_argument('--out', required=True, help='Token file to write')

    p = sub.add_parser('evaluate', help='Score a token file (or the original features)')
    _add_common_args(p)
    _add_data_args(p)
    p.add_argument('--tokens', help='Token file; omit to score the original features')
    p.add_argument('--out', help='Write the score report JSON here')

    p = sub.add_parser('report', help='Metrics table and plots from persisted artifacts')
    _add_common_args(p)
    _add_data_args(p)
    p.add_argument('--kb', required=True, help='Knowledge base file')
    p.add_argument('--model', help='Model directory (for HSIC)')
    p.add_argument('--tokens', help='Generated token file')
    p.add_argument('--cross-model', dest='cross_model', action='store_true', default=None,
                   help='Add DT/SF columns for the second learner')
    p.add_argument('--out', required=True, help='Report output directory')

    p = sub.add_parser('run-all', help='search -> train -> generate -> report')
    _add_common_args(p)
    _add_data_args(p)
    p.add_argument('--episodes', type=int, help='Number of episodes')
    p.add_argument('--epochs', type=int, help='Training epochs')
    p.add_argument('--cross-model', dest='cross_model', action='store_true', default=None,
                   help='Add DT/SF columns for the second learner')
    p.add_argument('--out', dest='output_dir', help=f'Output directory (default: {config.OUTPUT_DIR})')

    return parser


def dispatch(args, cfg: RunConfig) -> int:
    if args.command == 'search':
        return cmd_search(cfg, args.out)
    if args.command == 'train':
        return cmd_train(cfg, args.kb, args.out)
    if args.command == 'generate':
        return cmd_generate(cfg, args.model, args.out, kb_path=args.kb)
    if args.command == 'evaluate':
        return cmd_evaluate(cfg, args.tokens, args.out)
    if args.command == 'report':
        return cmd_report(cfg, args.kb, args.out, model_dir=args.model, tokens_path=args.tokens)
    return cmd_run_all(cfg)


def _log_dir(args, cfg: RunConfig):
    if args.command == 'search':
        return Path(args.out).parent
    if args.command == 'train':
        return Path(args.out)
    if args.command == 'generate':
        return Path(args.out).parent
    if args.command == 'evaluate':
        return Path(args.out).parent if args.out else None
    if args.command == 'report':
        return Path(args.out)
    return Path(cfg.output_dir)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ensure_valid(resolve_config(args), require_data=args.command != 'train')
        configure_logging(_log_dir(args, cfg), args.log_level)
        logger.info(f"Configuration: {json.dumps(get_config_summary(cfg), default=str)}")
        return dispatch(args, cfg)
    except Exception as e:
        code = exit_code_for(e)
        logger.error(f"{args.command} failed: {e}", exc_info=code == 1)
        print(f"✗ {type(e).__name__}: {e}", file=sys.stderr)
        diagnostics = getattr(e, 'diagnostics', None)
        if diagnostics:
            for entry in diagnostics:
                print(f"  - {entry}", file=sys.stderr)
        return code


if __name__ == '__main__':
    sys.exit(main())
