import logging

import numpy as np
import pytest
import torch

logging.getLogger("svgp").setLevel(logging.ERROR)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def t(x):
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line for an acceptance criterion, shown in the terminal summary."""

    def report(number, name, ok, detail=""):
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
