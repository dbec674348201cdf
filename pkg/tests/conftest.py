import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from latticectl.bands import compute_band_structure, wannier_states
from latticectl.units import experiment_config

settings.register_profile(
    "physics",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("physics")


@pytest.fixture(scope="session")
def cfg18():
    return experiment_config(18.0)


@pytest.fixture(scope="session")
def cfg25():
    return experiment_config(25.0)


@pytest.fixture(scope="session")
def spectrum18():
    return compute_band_structure(18.0)


@pytest.fixture(scope="session")
def basis18(spectrum18):
    return wannier_states(spectrum18)


@pytest.fixture(scope="session")
def basis25():
    return wannier_states(compute_band_structure(25.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""

    def _report(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"CRITERION {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
