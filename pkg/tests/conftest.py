from __future__ import annotations

import warnings

import pytest

_CRITERIA: list[str] = []


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion; printed in the terminal summary."""

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _quiet_probe_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="probe centre")
        yield
