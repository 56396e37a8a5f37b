from __future__ import annotations

import pytest

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(number: int, ok: bool | None, detail: str) -> None:
        status = "EXCLUDED" if ok is None else ("PASS" if ok else "FAIL")
        line = f"criterion {number:2d}: {status}  {detail}"
        _CRITERIA[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[n])
