import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("ldme", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("ldme")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
