import numpy as np
import pytest

from declutter.decomposer import DecomposerModel
from declutter.inpaint import InpainterModel
from declutter.scenes import generate_scene


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def decomposer64():
    return DecomposerModel(side=64, seed=7)


@pytest.fixture(scope="session")
def inpainter():
    return InpainterModel(seed=7)


@pytest.fixture(scope="session")
def scene_pool():
    return [generate_scene(s) for s in range(20)]
