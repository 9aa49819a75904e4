import logging

import numpy as np
import pytest

from trajforecast.data import (concat_windows, derive_velocities, expand_targets, make_windows, resample_uniform,
                               simulate_game)


def pytest_configure(config):
    logging.getLogger("trajforecast").setLevel(logging.ERROR)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_scene():
    """One short simulated game, resampled with velocities: 11 objects, 8 s."""
    game = simulate_game("t000", 1, 2, duration=8.0, seed=7)
    (series,) = resample_uniform(game)
    return derive_velocities(series)


@pytest.fixture(scope="session")
def small_windows(small_scene):
    """Target-first windows with 6 history and 5 forecast steps."""
    ws = concat_windows([make_windows(small_scene, 6, 5, stride=7)])
    return expand_targets(ws, rng=np.random.default_rng(0), per_window=2)
