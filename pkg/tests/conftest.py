import numpy as np
import pytest

from dilsa.features import FeatureConfig, FeatureContext
from dilsa.grid import build_count_cube, compute_baselines
from dilsa.survival import EventWindowConfig
from dilsa.synth import SynthConfig, generate

SMALL = SynthConfig(rows=5, cols=5, days=8, n_events=6, n_venues=3, min_gap_steps=20, n_poi=4, seed=7)


@pytest.fixture(scope="session")
def small_data():
    return generate(SMALL)


@pytest.fixture(scope="session")
def small_cube(small_data):
    cube = build_count_cube(small_data.trips, small_data.grid)
    return compute_baselines(cube, range(6))


@pytest.fixture(scope="session")
def small_ctx(small_data, small_cube):
    return FeatureContext(small_cube, small_data.weather, small_data.poi, FeatureConfig(tau=3, radius=1))


@pytest.fixture(scope="session")
def ecfg():
    return EventWindowConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
