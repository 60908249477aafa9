import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion, echoed in the summary."""

    def record(number, name, ok, detail=""):
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
        _VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
