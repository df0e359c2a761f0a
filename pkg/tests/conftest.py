import numpy as np
import pytest

from src.models.geometry import Intrinsics
from src.models.settings import ScenePreset
from src.services.synth_scenes import generate
from src.utils.config import reset_config

MICRO_HEIGHT = 16
MICRO_WIDTH = 48


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow end-to-end tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _fresh_config():
    reset_config()
    yield
    reset_config()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def intrinsics():
    return Intrinsics(fx=40.0, fy=40.0, cx=23.5, cy=7.5)


@pytest.fixture(scope="session")
def rigid_sample():
    return generate(7, ScenePreset.RIGID, height=MICRO_HEIGHT, width=MICRO_WIDTH)


@pytest.fixture(scope="session")
def rigid_triplet(rigid_sample):
    return rigid_sample.triplet(name="rigid")


@pytest.fixture(scope="session")
def dynamic_sample():
    return generate(
        3,
        ScenePreset.DYNAMIC,
        height=32,
        width=96,
        object_depths=(6.0,),
        object_centers=((48.0, 16.0),),
        object_velocities=((0.2, 0.0, 0.0),),
    )
