import json
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from skiplab.checkpoint import generate_random_model
from skiplab.model import ModelConfig

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"


def tiny_config(**overrides) -> ModelConfig:
    base = dict(vocab_size=19, d_model=8, n_layers=3, n_heads=2, d_ff=16, max_seq_len=12)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_model(seed: int = 0, **overrides):
    return generate_random_model(tiny_config(**overrides), seed)


@pytest.fixture
def model():
    return tiny_model(0)


@pytest.fixture(scope="session")
def paper_tables():
    return json.loads((FIXTURES / "paper_tables.json").read_text())
