import pytest

from agebif.model import build_model


@pytest.fixture(scope="session")
def model():
    return build_model()


@pytest.fixture(scope="session")
def small_model():
    return build_model(5, steps=16)


# acceptance verdicts, echoed after the run whether or not output is captured
VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
