"""Shared fixtures for the test suite."""

import pytest
import structlog

from src.models import Location, QuantileSpec, ScenarioConfig


@pytest.fixture(autouse=True)
def reset_logging():
    """Drop logging configuration bound to a captured stream by main()."""
    yield
    structlog.reset_defaults()


@pytest.fixture
def small_scenario() -> ScenarioConfig:
    """20 m x 20 m cell on a 2 m grid, small enough for fast tests."""
    return ScenarioConfig(
        cell_x_m=(-10.0, 10.0),
        cell_y_m=(-10.0, 10.0),
        bs_position_m=(-20.0, 0.0, 10.0),
        grid_step_m=2.0,
        num_paths=8,
        thomas_parent_intensity=0.01,
        thomas_offspring_mean=10.0,
        thomas_offspring_spread_m=4.0,
        master_seed=7,
    )


@pytest.fixture
def desk_spec() -> QuantileSpec:
    return QuantileSpec(epsilon=0.01, delta=0.05)


@pytest.fixture
def origin() -> Location:
    return Location(id=0, x=0.0, y=0.0, z=1.5)
