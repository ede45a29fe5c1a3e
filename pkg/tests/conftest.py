"""Shared tiny-model fixtures."""

import numpy as np
import pytest

from dualdec.config import RunConfig
from dualdec.model import ModelParams


def tiny_config(**overrides) -> RunConfig:
    base = dict(
        n_layers=1,
        d_model=16,
        n_heads=2,
        d_ff=32,
        vocab_size=32,
        max_len=16,
        d_prime=8,
        top_k=6,
        dec_heads=1,
    )
    base.update(overrides)
    return RunConfig(**base)


def tiny_params(cfg=None, seed=0, dtype=np.float64, **overrides) -> ModelParams:
    cfg = cfg or tiny_config(**overrides)
    return ModelParams(cfg, np.random.default_rng(seed), dtype=dtype)


@pytest.fixture
def cfg16():
    return tiny_config()


@pytest.fixture
def params16(cfg16):
    return tiny_params(cfg16)
