from fractions import Fraction

import pytest

from nvodsched.core import VideoSpec

# filled by test_acceptance, one line per criterion
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def video():
    """The 10 MB / 10 kbps setup, D = 8000 s."""
    return VideoSpec(8 * 10**7, 10**4)


@pytest.fixture
def D():
    return Fraction(8000)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
