import numpy as np
import pytest
import torch

from keyframe_stylize.core import ImageBuffer, KeyframePair, UnpairedSet
from keyframe_stylize.generator import GeneratorConfig
from keyframe_stylize.perceptual import StandInExtractor, VGGExtractor

torch.set_num_threads(1)


def random_image(h, w, seed=0):
    return ImageBuffer(np.random.default_rng(seed).uniform(0, 1, (3, h, w)))


@pytest.fixture
def rand_img():
    return random_image


@pytest.fixture(scope="session")
def tiny_gen_config():
    return GeneratorConfig(residual_blocks=1, base_channels=4)


@pytest.fixture(scope="session")
def stand_in():
    return StandInExtractor()


@pytest.fixture(scope="session")
def vgg():
    return VGGExtractor()


@pytest.fixture
def tiny_problem():
    """Two keyframes and two unpaired frames at 8x8."""
    kfs = tuple(
        KeyframePair(random_image(8, 8, 10 + i), random_image(8, 8, 20 + i), f"k{i}") for i in range(2)
    )
    z = UnpairedSet((random_image(8, 8, 30), random_image(8, 8, 31)), (3, 7))
    return kfs, z


ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)
