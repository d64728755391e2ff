import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fraclap.core import Grid, validate_params

settings.register_profile(
    "default",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid2():
    return Grid.cube(2, 1.0, 1.0 / 8.0)


@pytest.fixture
def p2():
    return validate_params(2, 0.4)


def pytest_terminal_summary(terminalreporter):
    from importlib import import_module

    try:
        results = import_module("test_acceptance").RESULTS
    except ImportError:
        return
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results):
            terminalreporter.write_line(results[key])
