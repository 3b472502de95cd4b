"""Shared fixtures: seeded generators, small cost specs and isolated service
clients."""

from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient

from convex_evasion.core.config import ExperimentConfig, load_config
from convex_evasion.geometry.cost import CostSpec
from convex_evasion.main import create_app


@pytest.fixture
def rng() -> np.random.Generator:
    """Return a generator with a fixed seed so statistical checks are repeatable."""
    return np.random.default_rng(20240611)


@pytest.fixture
def l1_plane() -> CostSpec:
    """Return the unweighted L1 cost around the origin of the plane."""
    return CostSpec.unweighted(2)


@pytest.fixture
def config_factory(tmp_path: Path) -> Callable[..., ExperimentConfig]:
    """Build configurations whose results land in a fresh temporary
    directory."""
    sequence = 0

    def make_config(**overrides: object) -> ExperimentConfig:
        nonlocal sequence
        sequence += 1
        overrides.setdefault("output_dir", tmp_path / f"results-{sequence}")
        return load_config(None, **overrides)

    return make_config


@pytest.fixture
def client_factory(
    config_factory: Callable[..., ExperimentConfig],
) -> Callable[..., tuple[Path, TestClient]]:
    """Build isolated apps, each with its own configuration and output
    directory."""

    def make_client(**overrides: object) -> tuple[Path, TestClient]:
        config = config_factory(**overrides)
        app = create_app(config)
        return config.output_dir, TestClient(app, raise_server_exceptions=False)

    return make_client


@pytest.fixture
def service_client(client_factory) -> tuple[Path, TestClient]:
    """Return a client for the default configuration."""
    return client_factory()
