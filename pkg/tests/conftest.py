from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from reactivity_gat.model import ModelConfig, init_params

settings.register_profile(
    "repo", deadline=None, derandomize=True, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def example_csv() -> Path:
    return DATA_DIR / "example_pairs.csv"


@pytest.fixture(scope="session")
def small_cfg() -> ModelConfig:
    return ModelConfig(fingerprint_dim=12, radius=3, T=3, dropout=0.0, seed=0)


@pytest.fixture(scope="session")
def small_params(small_cfg):
    return init_params(small_cfg)
