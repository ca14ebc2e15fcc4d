import numpy as np
import pytest

from msvi.core import RandomStream


@pytest.fixture
def gen():
    return RandomStream(12345, (0,)).generator()


def pytest_terminal_summary(terminalreporter):
    import test_acceptance
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(line)
