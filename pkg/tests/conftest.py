"""Shared fixtures; acceptance results are summarised at the end of the run."""
import pytest

ACCEPTANCE = {}


def record(number, passed, detail):
    """Store one acceptance line; printed in the terminal summary."""
    status = "RECORDED" if passed is None else ("PASS" if passed else "FAIL")
    ACCEPTANCE[number] = f"criterion {number:>2}: {status}  {detail}"


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
