"""
Test configuration and shared fixtures for the GCSAM toolkit tests.
"""
import json

import numpy as np
import pytest
from dotenv import load_dotenv

from gcsam import MlpSpec, gen_two_moons, init_params, parse_config
from tests.fixtures import TINY_RUN_CONFIG

# Load environment variables
load_dotenv()
load_dotenv('.env.secrets')


@pytest.fixture
def rng():
    """Seeded generator so random inputs are identical on every run."""
    return np.random.default_rng(0)


@pytest.fixture
def small_spec():
    return MlpSpec(layer_sizes=[2, 4, 2], seed=0)


@pytest.fixture
def small_params(small_spec):
    return init_params(small_spec)


@pytest.fixture(scope="session")
def moons():
    return gen_two_moons(200, 0.2, seed=0)


@pytest.fixture
def tiny_config():
    """A RunConfig small enough to train in well under a second."""
    return parse_config(json.loads(json.dumps(TINY_RUN_CONFIG)))


@pytest.fixture
def config_file(tmp_path):
    """Write a config dict to disk and return its path."""

    def write(data, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(data, indent=2), encoding="utf-8")
        return path

    return write


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    """Fresh output root; environment overrides are cleared."""
    for name in ("GCSAM_OUTPUT_DIR", "GCSAM_WORKERS", "GCSAM_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)
    root = tmp_path / "runs"
    return root
