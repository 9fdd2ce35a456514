import numpy as np
import pytest

from cxtalk.waveform import make_pair


@pytest.fixture(scope="session")
def pairs():
    return make_pair(k=0.012), make_pair(k=0.013)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
