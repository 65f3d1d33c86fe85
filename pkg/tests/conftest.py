import numpy as np
import pytest

from llginv.grid import Grid

# one "criterion N: PASS|FAIL ..." line per acceptance test, shown after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def grid():
    return Grid.default()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def report():
    def emit(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
