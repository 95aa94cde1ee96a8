"""Shared fixtures: tiny model configs and a small generated dataset."""

import logging

import numpy as np
import pytest

from conveyor_vla.models.training import ModelConfig
from conveyor_vla.persistence import EpisodeStore
from conveyor_vla.sim import generate_dataset

logging.getLogger("conveyor_vla").setLevel(logging.WARNING)


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def tiny_cfg() -> ModelConfig:
    """16x16 views, one foresight token per image, float64 for gradient checks."""
    return ModelConfig(
        hidden=16,
        layers=2,
        heads=2,
        ffn_hidden=32,
        image_size=16,
        patch_size=8,
        n_views=3,
        latent_channels=4,
        latent_tokens_side=1,
        compress_channels=8,
        chunk_length=4,
        time_embed_dim=8,
        dtype="float64",
        seed=3,
    )


@pytest.fixture
def env_cfg() -> ModelConfig:
    """Smallest model that accepts the 64x64 three-view renders."""
    return ModelConfig(
        hidden=16,
        layers=1,
        heads=2,
        ffn_hidden=32,
        image_size=64,
        patch_size=16,
        n_views=3,
        latent_channels=4,
        latent_tokens_side=1,
        compress_channels=8,
        chunk_length=4,
        time_embed_dim=8,
        dtype="float64",
        seed=0,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory: pytest.TempPathFactory):
    """Three static-belt expert episodes written once per session."""
    out = tmp_path_factory.mktemp("data") / "static_small"
    generate_dataset(out, episodes=3, seed=7, tier="static", workers=2)
    return out


@pytest.fixture(scope="session")
def slow_dataset_dir(tmp_path_factory: pytest.TempPathFactory):
    out = tmp_path_factory.mktemp("data") / "slow_small"
    generate_dataset(out, episodes=2, seed=11, tier="slow", workers=2)
    return out


@pytest.fixture
def store(dataset_dir) -> EpisodeStore:
    return EpisodeStore(dataset_dir)
