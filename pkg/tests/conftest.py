import numpy as np
import pytest


@pytest.fixture
def gen():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running experiment reproduction")
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")
