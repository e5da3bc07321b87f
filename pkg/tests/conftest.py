from pathlib import Path

import numpy as np
import pytest

SYNTHETIC = Path(__file__).resolve().parents[1] / "src" / "agepop" / "data" / "synthetic"


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def synthetic_dir():
    return SYNTHETIC


ACCEPTANCE_LINES = []


@pytest.fixture
def record_criterion():
    """Collect one pass/fail line per acceptance criterion for the summary."""

    def record(name, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
