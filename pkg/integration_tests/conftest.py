"""
Shared fixtures for the slow suites: the synthetic interaction dataset and
a small run configuration factory.
"""

import sys
import os

import pytest

# Add parent directory to path to import modules
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import DataConfig, ModelConfig, RunConfig, SearchConfig
from scripts.make_synthetic import SENSITIVE, TARGET, make_synthetic_frame


def small_run_config(csv_path, out_dir, seed=0, episodes=30, epochs=50,
                     target=TARGET, sensitive=SENSITIVE, **model_overrides):
    model = dict(embed_dim=16, hidden_dim=32, latent_dim=16, epochs=epochs, seed=seed)
    model.update(model_overrides)
    return RunConfig(
        data=DataConfig(path=str(csv_path), target=target, sensitive=sensitive),
        search=SearchConfig(episodes=episodes, steps_per_episode=8, seed=seed),
        model=ModelConfig(**model),
        output_dir=str(out_dir),
        seed=seed,
    )


@pytest.fixture(scope='session')
def synthetic_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp('data') / 'synthetic.csv'
    make_synthetic_frame(n_rows=500, seed=0).to_csv(path, index=False)
    return path


@pytest.fixture
def run_config_factory():
    return small_run_config
