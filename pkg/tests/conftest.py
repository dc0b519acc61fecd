import numpy as np
import pytest

from vqaprobe import synthgen


@pytest.fixture(scope="session")
def small_dataset():
    return synthgen.generate(synthgen.BiasConfig(n_train=1500, n_test=300, seed=7))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[key])
