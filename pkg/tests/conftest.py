import pytest

from condensation import harness

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def ctx():
    """One shared context so expensive matching solves are reused across tests."""
    return harness.Context(harness.ExperimentConfig())


@pytest.fixture(scope="session")
def disk(ctx):
    return ctx.curve()


@pytest.fixture(scope="session")
def star(ctx):
    return ctx.curve("star_domain")


@pytest.fixture(scope="session")
def record_acceptance():
    def record(check):
        ACCEPTANCE_LINES[check.criterion] = check.line()
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
