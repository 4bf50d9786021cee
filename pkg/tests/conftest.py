"""
Pytest configuration and fixtures for fracspde tests.
"""
import json
import os
import pytest
import tempfile
from pathlib import Path

from common.types import HurstPair, NonlinearSource, ProblemSpec, SourceKind


@pytest.fixture(scope="session")
def test_data_dir():
    """Fixture providing path to test data directory."""
    return Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def published_tables(test_data_dir):
    """Published rate tables (errors, observed and bracketed theoretical rates)."""
    return json.loads((test_data_dir / "published_tables.json").read_text())


@pytest.fixture
def temp_dir():
    """Fixture providing a temporary directory for test files."""
    with tempfile.TemporaryDirectory() as temp_dir:
        yield Path(temp_dir)


@pytest.fixture
def mock_env_vars():
    """Environment used by tests that exercise the settings layer."""
    return {
        "FRACSPDE_SEED": "7",
        "FRACSPDE_WORKERS": "2",
        "FRACSPDE_LOG_LEVEL": "debug",
    }


@pytest.fixture
def clean_environment(mock_env_vars):
    """Fixture that provides a clean environment for each test."""
    original_env = os.environ.copy()

    os.environ.clear()
    os.environ.update(mock_env_vars)

    yield os.environ

    os.environ.clear()
    os.environ.update(original_env)


@pytest.fixture
def empty_environment():
    """No FRACSPDE_* variables at all."""
    original_env = os.environ.copy()
    for name in list(os.environ):
        if name.startswith("FRACSPDE_"):
            del os.environ[name]

    yield os.environ

    os.environ.clear()
    os.environ.update(original_env)


@pytest.fixture
def rough_spec():
    """Small noisy problem with a sine source."""
    return ProblemSpec(
        alpha=0.5,
        hurst=HurstPair(h1=0.4, h2=0.4),
        beta=1.0,
        l=1.0,
        T=0.25,
        f=NonlinearSource(kind=SourceKind.SINE, amplitude=1.0),
    )


@pytest.fixture
def quiet_spec():
    """No noise and no source: the solution stays at zero."""
    return ProblemSpec(alpha=0.5, hurst=HurstPair(h1=0.5, h2=0.5), beta=0.0)


@pytest.fixture
def minimal_config():
    """Run config with the smallest interesting problem."""
    return {
        "problem": {"alpha": 0.5, "hurst": {"h1": 0.5, "h2": 0.5}, "beta": 0.0},
        "grids": {"m_t": 8, "n_x": 8, "snapshots": [4]},
        "seed": 11,
    }
