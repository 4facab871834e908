import pytest

from atomask import BeamConfig, MaskConfig

# (criterion, passed, detail) rows recorded by test_acceptance.py
ACCEPTANCE_LOG = []


@pytest.fixture
def thin_mask():
    return MaskConfig(i1=1000.0)


@pytest.fixture
def double_mask():
    return MaskConfig(i1=1000.0, i2=1000.0, separation=1000.0)


@pytest.fixture
def beam():
    return BeamConfig()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LOG:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_LOG:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
