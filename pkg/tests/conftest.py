import numpy as np
import pytest

from arsvhedge.model import DEFAULT_PARAMS, ModelParams


@pytest.fixture
def params():
    return DEFAULT_PARAMS


@pytest.fixture
def gaussian_params():
    # constant volatility e^{-4}
    return ModelParams(r=0.0002, gamma=-8.0, phi=0.0, sigma_w=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance(pytestconfig):
    """Record one pass/fail line for an acceptance criterion."""

    def report(number, ok, detail):
        line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} {detail}"
        print(line)
        pytestconfig.acceptance_lines.append(line)
        return ok

    def note(text):
        print(text)
        pytestconfig.acceptance_lines.append(f"    note: {text}")

    report.note = note
    return report
