import math

import numpy as np
import pytest

from robust_dob.satellite import SATELLITE_X0, SatelliteParams, satellite_plant, sinusoid
from robust_dob.synthesis import GainVector, make_controller_params

SATELLITE_GAINS = (np.array([15.0, 8.0]), np.array([15.0, 8.0]))


@pytest.fixture(scope="session")
def satellite():
    return satellite_plant()


@pytest.fixture(scope="session")
def matched_satellite():
    """Satellite without uncertainty: m = mbar and no unknown attitude."""
    params = SatelliteParams(m_true=1.0, theta_unknown=sinusoid(0.0, 4 * math.pi))
    return satellite_plant(params)


@pytest.fixture(scope="session")
def example_gains():
    return GainVector(SATELLITE_GAINS)


@pytest.fixture
def build_params(satellite, example_gains):
    def build(tau=1e-3, phi=25.0, Phi=100.0, margin=1.0):
        return make_controller_params(example_gains, satellite[0].rd, tau, phi, Phi, margin)

    return build


@pytest.fixture(scope="session")
def x0():
    return np.array(SATELLITE_X0)


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: dict = {}


@pytest.fixture(scope="session")
def acceptance_log():
    def record(number: int, passed: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
