import numpy as np
import pytest

from mlpfbsde.problem import make_builtin
from mlpfbsde.rng import RealizationContext


@pytest.fixture
def ctx1():
    return RealizationContext(7, 1, 1.0)


@pytest.fixture
def bm_linear():
    return make_builtin("arithmetic_bm_linear", 1, {"alpha": 1.0, "beta": 1.0})


@pytest.fixture
def degenerate():
    return make_builtin("degenerate_constant", 2, {"beta": 0.75, "g": "cos"})


def contexts(count, d=1, T=1.0, offset=0):
    return (RealizationContext(offset + k, d, T) for k in range(count))


def origin(d):
    return np.zeros(d)


ACCEPTANCE_LINES = {}


def record_acceptance(number, passed, detail):
    line = f"ACCEPTANCE {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
