import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sketchfill.autodiff import save_checkpoint
from sketchfill.config import Config
from sketchfill.model import DiscriminatorConfig, GeneratorConfig
from sketchfill.training import init_state, state_arrays

# single-core sandbox: first-use jit compilation can stall any one example
settings.register_profile(
    "slowbox", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("slowbox")


@pytest.fixture(scope="session")
def config() -> Config:
    return Config()


@pytest.fixture(scope="session")
def init_ckpt(tmp_path_factory, config):
    """An untrained desk-scale checkpoint shared across tests."""
    gen_cfg = GeneratorConfig.from_config(config)
    disc_cfg = DiscriminatorConfig.from_config(config)
    state = init_state(gen_cfg, disc_cfg, seed=77, lr=config.get_float("train.lr"))
    path = tmp_path_factory.mktemp("ckpt") / "init.fsck"
    save_checkpoint(path, state_arrays(state), 0)
    return str(path)


@pytest.fixture(scope="session")
def editor_model(init_ckpt, config):
    from sketchfill.editor import load_model

    return load_model(init_ckpt, config)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
