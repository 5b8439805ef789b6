import pathlib

import pytest

REPO = pathlib.Path(__file__).resolve().parents[1]
SCENARIOS = REPO / "scenarios"


@pytest.fixture(scope="session")
def scenario_dir() -> pathlib.Path:
    return SCENARIOS


@pytest.fixture(scope="session")
def ring4_scenario():
    from etsync.config import load_config
    return load_config(SCENARIOS / "ring4.toml")


@pytest.fixture(scope="session")
def ring4_result(ring4_scenario):
    """Full-horizon run of the bundled scenario; shared across the suite
    because it takes ~25 s."""
    from etsync.sim import run_scenario
    return run_scenario(ring4_scenario)
