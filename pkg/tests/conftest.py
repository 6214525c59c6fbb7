import math
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from fracpucci import Domain, GridFunction  # noqa: E402
from oracles import bump  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def d16():
    return Domain(2, 1 / 16, 6.0)


@pytest.fixture(scope="session")
def d32():
    return Domain(2, 1 / 32, 8.0)


@pytest.fixture(scope="session")
def d64():
    return Domain(2, 1 / 64, 8.0)


@pytest.fixture(scope="session")
def bump32(d32):
    return GridFunction.from_callable(d32, bump)


@pytest.fixture(scope="session")
def bump16(d16):
    return GridFunction.from_callable(d16, bump)


def gaussian(points, c=(0.0, 0.0), s=1.0):
    c = np.reshape(c, (-1,) + (1,) * (points.ndim - 1))
    return np.exp(-np.sum((points - c) ** 2, axis=0) / s)


def lattice_point(domain, x):
    return domain.point(domain.index_of(x))


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


__all__ = ["gaussian", "lattice_point", "rel", "math"]


_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and (report.when == "call" or report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        if report.when == "call" or report.failed:
            _ACCEPTANCE.append((name, "PASS" if report.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for name, verdict in _ACCEPTANCE:
            terminalreporter.write_line(f"{verdict}  {name}")
