import pytest
from hypothesis import settings

from ckstab.model import SystemParams

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def fig2():
    return SystemParams.fig2()


@pytest.fixture
def fig2_full():
    return SystemParams.fig2(susceptibility="full")


@pytest.fixture
def report():
    """Record one acceptance line; printed at the end of the run."""

    def _add(line: str):
        ACCEPTANCE_LINES.append(line)
        print(line)

    return _add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
