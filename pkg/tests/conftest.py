import os
from dataclasses import replace

import pytest

from src.arrowflow.field import GridSpec, make_synthetic
from src.arrowflow.processor.pipeline_processor import synthesize
from src.arrowflow.run_config import RunConfig
from tests.utils import run_pipeline_placement

DIPOLE_GRID = GridSpec(64, 64, 40)


@pytest.fixture(scope="session")
def dipole_field():
    """
    The 64x64 grid, 40 step dipole used by the acceptance runs.
    """
    return synthesize("dipole", DIPOLE_GRID)


@pytest.fixture(scope="session")
def dipole_config():
    return RunConfig(d_sep=8.0, density="uniform")


@pytest.fixture(scope="session")
def dipole_run(dipole_field, dipole_config):
    """
    Finished placement of the dipole dataset with every stage enabled.
    """
    return run_pipeline_placement(dipole_field, dipole_config)


@pytest.fixture(scope="session")
def dipole_run_forward_only(dipole_field, dipole_config):
    return run_pipeline_placement(dipole_field, replace(dipole_config, backward_stage=False))


@pytest.fixture(scope="session")
def constant_field():
    """v = (1, 0) on a 40x40 grid with 6 steps."""
    return make_synthetic("constant", GridSpec(40, 40, 6), velocity=(1.0, 0.0))


@pytest.fixture(scope="module")
def rotation_field():
    """Steady rigid rotation about the origin, omega = 1."""
    return make_synthetic("rigid_rotation", GridSpec(41, 41, 1, x0=-2.0, y0=-2.0, dx=0.1, dy=0.1), omega=1.0)


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    """Keep ARROWFLOW_* variables of the calling shell out of the tests."""
    for var in list(os.environ):
        if var.startswith("ARROWFLOW_"):
            monkeypatch.delenv(var, raising=False)
    yield
