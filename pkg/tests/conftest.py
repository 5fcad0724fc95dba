import numpy as np
import pytest

from smn.data import GenConfig, build_samples, generate_synthetic, sample_arrays
from smn.gradcheck import micro_sample


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_scenes():
    return generate_synthetic(GenConfig(scenes=4), seed=3)


@pytest.fixture(scope="session")
def small_samples(small_scenes):
    return build_samples(small_scenes, 20, 20)


@pytest.fixture(scope="session")
def sample_i(small_samples):
    return sample_arrays(small_samples[0])


@pytest.fixture(scope="session")
def sample_ir(small_samples):
    return sample_arrays(small_samples[0], with_r=True)


@pytest.fixture(scope="session")
def micro():
    return micro_sample(1)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
