import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from orlicz_lab import nfunc
from orlicz_lab.fespace import build_mesh

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def mesh16():
    return build_mesh(1.0, 1 / 16)


@pytest.fixture(scope="session")
def mesh32():
    return build_mesh(1.0, 1 / 32)


@pytest.fixture(scope="session")
def quad():
    return nfunc.make_catalog("quadratic")


@pytest.fixture(scope="session")
def cubic():
    return nfunc.make_catalog("power", 3.0)


@pytest.fixture(scope="session")
def quartic():
    return nfunc.make_catalog("power", 4.0)


def random_matrix(rng, n=None):
    shape = (2, 2) if n is None else (n, 2, 2)
    return rng.normal(size=shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
