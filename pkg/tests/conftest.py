import pytest

_CRITERIA = []


@pytest.fixture(scope="session")
def record_criterion():
    """Record one acceptance line; printed together in the terminal summary."""

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.line(line)
