"""
Shared pytest fixtures for the heat flow lab
"""

from pathlib import Path

import numpy as np
import pytest

from agents.heat_flow.bundle import flat_reference_metric, make_bundle
from agents.heat_flow.geometry import build_grid

SCENARIO_DIR = Path(__file__).parent / "scenarios"
DEFORMATION = [{"row": 1, "col": 0, "value": [0.7, 0.0]}]


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full flow runs on the scenario fixtures")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def square_grid():
    return build_grid(48, 48, 1j)


@pytest.fixture
def skew_grid():
    return build_grid(48, 48, 0.3 + 0.8j)


@pytest.fixture
def small_grid():
    return build_grid(16, 16, 1j)


@pytest.fixture
def extension_bundle(square_grid):
    """Rank 2, twists [1, 0], with a nonzero extension class"""
    return make_bundle(square_grid, 2, [1, 0], background_a=DEFORMATION)


@pytest.fixture
def split_bundle(square_grid):
    """L_1 + L_0 without deformation"""
    return make_bundle(square_grid, 2, [1, 0])


@pytest.fixture
def reference(extension_bundle):
    return flat_reference_metric(extension_bundle)


@pytest.fixture
def scenario_dir():
    return SCENARIO_DIR
