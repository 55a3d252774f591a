# tests/conftest.py
import os
import tempfile

# Settings are read at import time; point the service at throwaway storage first.
_TMP = tempfile.mkdtemp(prefix="balance-tests-")
os.environ["DATABASE_URL"] = f"sqlite:///{os.path.join(_TMP, 'balance.db')}"
os.environ["REPORTS_DIR"] = os.path.join(_TMP, "reports")
os.environ["DATA_DIR"] = os.path.join(_TMP, "data")
os.environ["MAX_WORKERS"] = "2"

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from app.core.features import FeatureSchema, featurize_log  # noqa: E402
from app.core.simworld import PopulationConfig, generate_population, run_season  # noqa: E402


@pytest.fixture(scope="session")
def small_config():
    """150 players, 10 days of 60 matches."""
    return PopulationConfig(num_players=150, days=10, matches_per_day=60, seed=11)


@pytest.fixture(scope="session")
def population(small_config):
    return generate_population(small_config)


@pytest.fixture(scope="session")
def season(small_config, population):
    return list(run_season(small_config, population))


@pytest.fixture(scope="session")
def schema(small_config):
    return FeatureSchema(roles=small_config.roles, actions=small_config.actions)


@pytest.fixture(scope="session")
def feature_frame(season, schema):
    return featurize_log(season, schema)


@pytest.fixture()
def random_rows(schema):
    """Dense random feature rows; no relation to any simulated match."""
    rng = np.random.default_rng(5)
    return rng.normal(size=(300, schema.dim))
