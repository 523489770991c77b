"""Pytest configuration and fixtures."""

from pathlib import Path

import numpy as np
import pytest

from app.core.config import Settings
from app.models.schemas import OracleConfig, Scenario
from app.services.gridmap_service import features, load_map, parse_map
from app.services.mdp_service import build_mdp
from app.services.profile_service import profile_store_load
from app.services.selfcheck_service import ROOM_3X3, ROOM_5X5
from app.utils.reward_spec import parse_reward_spec

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
MAP_PATH = DATA_DIR / "maps" / "two_bedroom.map"
PROFILES_PATH = DATA_DIR / "profiles.json"
SCENARIO_PATH = DATA_DIR / "scenarios" / "two_residents.json"
REWARD_PATH = DATA_DIR / "rewards" / "ground_truth.txt"

# Zone ids follow the sorted legend glyphs: B, C, K, L.
BEDROOM1, BEDROOM2, KITCHEN, LIVING = 0, 1, 2, 3


@pytest.fixture
def test_settings():
    """Create test settings."""
    return Settings(environment="test", log_format="text")


@pytest.fixture
def house_map():
    """The two-bedroom fixture house."""
    return load_map(MAP_PATH)


@pytest.fixture
def house_mdp(house_map):
    return build_mdp(house_map)


@pytest.fixture
def house_phi(house_map, house_mdp):
    """State feature matrix of the fixture house."""
    return features(house_map).for_states(house_mdp)


@pytest.fixture
def ground_truth(house_map):
    """Linear ground-truth reward from the fixture reward file."""
    return parse_reward_spec(REWARD_PATH.read_text(encoding="utf-8"), features(house_map).names)


@pytest.fixture
def room3():
    """A 3x3 room, small enough for exhaustive enumeration."""
    grid = parse_map(ROOM_3X3)
    mdp = build_mdp(grid)
    return grid, mdp, features(grid).for_states(mdp)


@pytest.fixture
def room5():
    """A 5x5 floor split into a study and a hall by a door."""
    grid = parse_map(ROOM_5X5)
    mdp = build_mdp(grid)
    return grid, mdp, features(grid).for_states(mdp)


@pytest.fixture
def profiles():
    return profile_store_load(PROFILES_PATH)


@pytest.fixture
def scenario():
    """Two residents sharing the living room, perfect oracles."""
    return Scenario.model_validate_json(SCENARIO_PATH.read_text(encoding="utf-8"))


@pytest.fixture
def instant_oracles():
    """Perfect detector and recognizer with zero stage latency."""
    return OracleConfig(p_detect=1.0, sigma=0.0, p_correct_id=1.0,
                        detect_latency=0, recognize_latency=0, track_latency=0, forecast_latency=0)


@pytest.fixture
def rng():
    return np.random.default_rng(7)
