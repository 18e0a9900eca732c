import math
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from diodesquid.cpr import cpr_diode, homogeneous_table
from diodesquid.params import CircuitParams, DiodeModelParams
from diodesquid.squid import proportional_switching

settings.register_profile(
    "default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile(
    "thorough", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

TWO_PI = 2.0 * math.pi

# ground truth used throughout: shared CPR parameters and per-field linear inductance
TRUTH_SHARED = dict(I00=35e-6, epsilon=0.78, b=0.8, deltaB_per_tesla=TWO_PI / 0.305)
TRUTH_FIELDS = (0.0, 0.1, 0.2, 0.25, 0.275)
TRUTH_DELTA_ELL = (1.276, 1.3, 1.4, 1.45, 1.5)
SWITCHING_FRACTION = 0.6


def diode_params(field: float, delta_ell: float, **over) -> DiodeModelParams:
    s = dict(TRUTH_SHARED, **over)
    return DiodeModelParams(s["I00"], s["epsilon"], s["b"], s["deltaB_per_tesla"] * field, delta_ell)


@pytest.fixture(scope="session")
def circuit() -> CircuitParams:
    return CircuitParams(TWO_PI * 10.380e9, 397e-12, 44e-12)


@pytest.fixture(scope="session")
def homogeneous():
    """Zero-field homogeneous constriction: 30 uA in series with 12 pH."""
    return homogeneous_table(30e-6, 12e-12)


@pytest.fixture(scope="session")
def sine_table():
    return homogeneous_table(30e-6, 0.0)


@pytest.fixture(scope="session")
def zero_field_diode():
    return cpr_diode(diode_params(0.0, TRUTH_DELTA_ELL[0]))


@pytest.fixture(scope="session")
def high_field_diode():
    return cpr_diode(diode_params(0.275, TRUTH_DELTA_ELL[-1]))


@pytest.fixture(scope="session")
def rule_of():
    return lambda table: proportional_switching(table, SWITCHING_FRACTION)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
