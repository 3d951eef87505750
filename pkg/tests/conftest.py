"""
Pytest configuration and shared fixtures.
"""
import os

import numpy as np
import pytest

# Set test environment
os.environ["DASHLAB_LOG_LEVEL"] = "WARNING"

from dashlab.attribution import sample_background
from dashlab.boost import TrainConfig, fit
from dashlab.cli import configure_logging
from dashlab.synthdata import DgpConfig, GroupSpec, sample_dataset


@pytest.fixture(scope="session", autouse=True)
def quiet_logging():
    """Route structlog through stdlib logging at WARNING for the whole run."""
    configure_logging("WARNING", "console")


@pytest.fixture
def pair_dataset():
    """Symmetric correlated pair (rho=0.9) with unit weights."""
    config = DgpConfig(groups=GroupSpec(1, 2, 0.9), betas=(1.0, 1.0), n_samples=500, seed=3)
    return sample_dataset(config)


@pytest.fixture
def independent_dataset():
    """Three independent features; only the first two carry signal."""
    config = DgpConfig(groups=GroupSpec(1, 3, 0.0), betas=(2.0, 1.0, 0.0), n_samples=400, seed=11)
    return sample_dataset(config)


@pytest.fixture
def stump_config():
    return TrainConfig(rounds=30, max_depth=1, learning_rate=0.3, subsample=0.8)


@pytest.fixture
def small_ensemble(independent_dataset):
    """Depth-3 ensemble small enough for brute-force Shapley checks."""
    config = TrainConfig(rounds=10, max_depth=3, learning_rate=0.3, subsample=0.8, seed=1)
    return fit(independent_dataset, config)


@pytest.fixture
def background(independent_dataset):
    return sample_background(independent_dataset, 16, 7)


# Test markers
def pytest_configure(config):
    """Configure pytest markers."""
    config.addinivalue_line("markers", "unit: Unit tests (fast, no Monte Carlo)")
    config.addinivalue_line("markers", "slow: Monte Carlo and experiment trend tests (>1s)")
