import numpy as np
import pytest

from snfe.model import GainFunction, SynapticKernel
from snfe.wave import solve_profile


@pytest.fixture(scope="session")
def gain():
    return GainFunction(8.0, 0.5)


@pytest.fixture(scope="session")
def expkernel():
    return SynapticKernel("exponential", 1.0)


@pytest.fixture(scope="session")
def symmetric_wave(gain, expkernel):
    return solve_profile(gain, expkernel)


@pytest.fixture(scope="session")
def moving_wave(expkernel):
    # kappa = 0.4 moves left; the solver hands back the reflected right-moving front
    return solve_profile(GainFunction(8.0, 0.4), expkernel)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
