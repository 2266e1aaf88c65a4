import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import yaml
from dotenv import load_dotenv

from errors import ConfigError

# Load environment variables from .env file
load_dotenv()

# Parallel workers for forest fitting and candidate scoring
WORKERS = int(os.getenv('DELTA_WORKERS', '1'))

# Logging
LOG_LEVEL = os.getenv('DELTA_LOG_LEVEL', 'INFO').upper()
LOG_FILE = os.getenv('DELTA_LOG_FILE', 'delta.log')

# Where runs are written when no --out/output_dir is given
OUTPUT_DIR = os.getenv('DELTA_OUTPUT_DIR', 'runs')

SEED = int(os.getenv('DELTA_SEED', '42'))

AGENT_POLICIES = ('dqn', 'random')
LEARNER_CHOICES = ('rf', 'linear')


@dataclass
class DataConfig:
    path: Optional[str] = None
    target: Optional[str] = None
    sensitive: Optional[str] = None
    task: str = 'clf'
    delimiter: str = ','


@dataclass
class SearchConfig:
    """Phase I settings: agents, replay, exploration and episode budget."""
    beta_ib: float = 0.1
    gamma: float = 0.9
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay: float = 100.0
    episodes: int = 30
    steps_per_episode: int = 8
    target_sync_interval: int = 50
    buffer_capacity: int = 10000
    batch_size: int = 64
    learning_rate: float = 1e-3
    hidden_dim: int = 128
    d_state: int = 64
    corr_threshold: float = 0.3
    max_expr_tokens: int = 15
    agent_policy: str = 'dqn'
    learner: str = 'rf'
    n_folds: int = 5
    record_timestamps: bool = False
    seed: int = SEED


@dataclass
class ModelConfig:
    """Phase II settings for the disentangled sequence VAE."""
    embed_dim: int = 32
    hidden_dim: int = 64
    latent_dim: int = 32
    lambda_dis: float = 1.0
    lambda_causal: float = 0.5
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    kl_warmup_epochs: Optional[int] = None
    mask_prob: float = 0.1
    augment: bool = True
    grad_clip: float = 5.0
    max_decode_len: int = 256
    use_adversarial: bool = True
    use_disentangle: bool = True
    use_causal: bool = True
    seed: int = SEED

    @property
    def warmup_epochs(self) -> int:
        """KL warmup length; defaults to the first 20% of epochs."""
        if self.kl_warmup_epochs is not None:
            return self.kl_warmup_epochs
        return max(1, int(round(0.2 * self.epochs)))


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    selection_lambda: float = 1.0
    n_candidates: int = 16
    learner: str = 'rf'
    cross_model: bool = False
    output_dir: str = OUTPUT_DIR
    seed: int = SEED


_NESTED = {'data': DataConfig, 'search': SearchConfig, 'model': ModelConfig}


def _build(cls, values: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        where = f" in '{section}'" if section else ""
        raise ConfigError(f"Unknown config keys{where}: {', '.join(unknown)}")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"Invalid config section '{section or 'root'}': {e}")


def run_config_from_dict(raw: dict) -> RunConfig:
    """Build a RunConfig; nested seeds inherit the top-level seed unless set."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("Run config must be a mapping")
    top = {k: v for k, v in raw.items() if k not in _NESTED}
    seed = top.get('seed', SEED)

    nested = {}
    for name, cls in _NESTED.items():
        section = raw.get(name) or {}
        if not isinstance(section, dict):
            raise ConfigError(f"Config section '{name}' must be a mapping")
        section = dict(section)
        if name != 'data':
            section.setdefault('seed', seed)
        nested[name] = _build(cls, section, name)
    return _build(RunConfig, {**top, **nested}, '')


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Config file not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as handle:
            raw = yaml.safe_load(handle)
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse {path.name}: {e}")
    return run_config_from_dict(raw)


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """
    Apply flag overrides. Keys are RunConfig field names or 'section.field';
    None values mean "flag not given" and are skipped.
    """
    updates = {}
    nested_updates = {name: {} for name in _NESTED}
    for key, value in overrides.items():
        if value is None:
            continue
        if '.' in key:
            section, name = key.split('.', 1)
            if section not in _NESTED or name not in {f.name for f in fields(_NESTED[section])}:
                raise ConfigError(f"Unknown override: {key}")
            nested_updates[section][name] = value
        else:
            if key not in {f.name for f in fields(RunConfig)}:
                raise ConfigError(f"Unknown override: {key}")
            updates[key] = value

    # a new top-level seed flows into the nested sections unless they were set too
    if 'seed' in updates:
        for section in ('search', 'model'):
            nested_updates[section].setdefault('seed', updates['seed'])
    for section, values in nested_updates.items():
        if values:
            updates[section] = replace(getattr(cfg, section), **values)
    return replace(cfg, **updates)


def _in_range(value, low, high, low_open=False, high_open=False) -> bool:
    above = value > low if low_open else value >= low
    below = value < high if high_open else value <= high
    return above and below


def validate_config(cfg: RunConfig, require_data: bool = False):
    """Validate a run configuration. Returns a list of problems, empty when valid."""
    errors = []

    if require_data:
        for name in ('path', 'target', 'sensitive'):
            if not getattr(cfg.data, name):
                errors.append(f"data.{name} is required")
    if cfg.data.task not in ('clf', 'reg', 'classification', 'regression'):
        errors.append(f"data.task must be clf or reg, got {cfg.data.task!r}")

    s = cfg.search
    if not _in_range(s.beta_ib, 0.0, 1.0, high_open=True):
        errors.append(f"search.beta_ib must lie in [0, 1), got {s.beta_ib}")
    if not _in_range(s.gamma, 0.0, 1.0, high_open=True):
        errors.append(f"search.gamma must lie in [0, 1), got {s.gamma}")
    for name in ('epsilon_start', 'epsilon_end'):
        if not _in_range(getattr(s, name), 0.0, 1.0):
            errors.append(f"search.{name} must lie in [0, 1]")
    if s.epsilon_end > s.epsilon_start:
        errors.append("search.epsilon_end must not exceed epsilon_start")
    if s.epsilon_decay <= 0:
        errors.append("search.epsilon_decay must be positive")
    if s.episodes < 0:
        errors.append("search.episodes must be >= 0")
    for name in ('steps_per_episode', 'target_sync_interval', 'buffer_capacity',
                 'batch_size', 'hidden_dim', 'd_state', 'max_expr_tokens'):
        if getattr(s, name) < 1:
            errors.append(f"search.{name} must be >= 1")
    if s.n_folds < 2:
        errors.append("search.n_folds must be >= 2")
    if s.agent_policy not in AGENT_POLICIES:
        errors.append(f"search.agent_policy must be one of {AGENT_POLICIES}")
    if s.learner not in LEARNER_CHOICES:
        errors.append(f"search.learner must be one of {LEARNER_CHOICES}")

    m = cfg.model
    for name in ('embed_dim', 'hidden_dim', 'latent_dim', 'epochs', 'batch_size', 'max_decode_len'):
        if getattr(m, name) < 1:
            errors.append(f"model.{name} must be >= 1")
    if m.latent_dim % 2:
        errors.append(f"model.latent_dim must be even, got {m.latent_dim}")
    if m.lambda_dis < 0 or m.lambda_causal < 0:
        errors.append("model.lambda_dis and model.lambda_causal must be >= 0")
    if m.lr <= 0:
        errors.append("model.lr must be positive")
    if not _in_range(m.mask_prob, 0.0, 1.0):
        errors.append("model.mask_prob must lie in [0, 1]")
    if m.kl_warmup_epochs is not None and m.kl_warmup_epochs < 0:
        errors.append("model.kl_warmup_epochs must be >= 0")

    if cfg.selection_lambda < 0:
        errors.append("selection_lambda must be >= 0")
    if cfg.n_candidates < 1:
        errors.append("n_candidates must be >= 1")
    if cfg.learner not in LEARNER_CHOICES:
        errors.append(f"learner must be one of {LEARNER_CHOICES}")

    return errors


def ensure_valid(cfg: RunConfig, require_data: bool = False) -> RunConfig:
    errors = validate_config(cfg, require_data=require_data)
    if errors:
        raise ConfigError("; ".join(errors))
    return cfg


def get_config_summary(cfg: Optional[RunConfig] = None):
    """Summary of the environment and run configuration, safe to log as JSON."""
    cfg = cfg or RunConfig()
    return {
        'workers': WORKERS,
        'log_level': LOG_LEVEL,
        'log_file': LOG_FILE,
        'output_dir': cfg.output_dir,
        'seed': cfg.seed,
        'data': asdict(cfg.data),
        'search': asdict(cfg.search),
        'model': asdict(cfg.model),
        'selection_lambda': cfg.selection_lambda,
        'n_candidates': cfg.n_candidates,
        'config_errors': validate_config(cfg),
    }
