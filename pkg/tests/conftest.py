from pathlib import Path

import pytest


@pytest.fixture
def datadir():
    return Path(__file__).parent / "data"


# one summary line per acceptance criterion, printed even when all pass
_criterion_outcomes = []


def pytest_runtest_logreport(report):
    name = report.nodeid.split("::")[-1]
    if "test_acceptance" not in report.nodeid or not name.startswith("test_criterion"):
        return
    if report.when == "call" or (report.when == "setup" and report.skipped):
        _criterion_outcomes.append((name, report.outcome.upper()))


def pytest_terminal_summary(terminalreporter):
    if not _criterion_outcomes:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in _criterion_outcomes:
        terminalreporter.write_line(f"{name}: {outcome}")
