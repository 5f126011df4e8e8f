import math

import numpy as np
import pytest

from fdx.functionals import Functionals
from fdx.grid import build_grid
from fdx.profiles import build_profile
from fdx.spectrum import weighted_spectrum

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def grid400():
    return build_grid(math.pi, 400)


@pytest.fixture(scope="session")
def F3(grid400):
    return Functionals(3.0, grid400)


@pytest.fixture(scope="session")
def phi3(grid400):
    return build_profile(grid400, 3.0, 1)


@pytest.fixture(scope="session")
def spec3(grid400, phi3):
    return weighted_spectrum(grid400, 3.0, phi3.field, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
