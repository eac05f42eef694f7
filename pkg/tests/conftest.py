from pathlib import Path

import numpy as np
import pytest

from psdae.network import load_case

ROOT = Path(__file__).resolve().parents[1]
WSCC9 = ROOT / "cases" / "wscc9.case"


@pytest.fixture(scope="session")
def wscc9():
    return load_case(WSCC9)


class ToyModel:
    """x_d' = -x_d + x_a,  0 = x_a - 2 x_d  (scalar, linear)."""

    n_d = 1
    n_a = 1

    def f(self, x_d, x_a, u):
        return np.array([-x_d[0] + x_a[0]])

    def g(self, x_d, x_a):
        return np.array([x_a[0] - 2.0 * x_d[0]])

    def jac_f(self, x_d, x_a, u):
        return np.array([[-1.0]]), np.array([[1.0]])

    def jac_g(self, x_d, x_a):
        return np.array([[-2.0]]), np.array([[1.0]])


@pytest.fixture
def toy():
    return ToyModel()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
