import numpy as np
import pytest

from pkfilter import kernels
from pkfilter.datagen import CovarianceModel, sample_design


@pytest.fixture(params=sorted(kernels.available_backends()))
def backend(request):
    """Each available kernel implementation in turn."""
    return kernels.available_backends()[request.param]


@pytest.fixture(scope="session")
def ar_design():
    return sample_design(CovarianceModel("ar", 60, rho=0.5), 200, seed=11)


@pytest.fixture(scope="session")
def iid_design():
    return sample_design(CovarianceModel("identity", 40), 150, seed=5)


def random_spd(p, rng, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    w = np.linspace(1.0, cond, p)
    return (Q * w) @ Q.T


ACCEPTANCE = {}


def report(criterion, passed, detail):
    """Record and print one acceptance line; the lines are repeated in the terminal summary."""
    line = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
