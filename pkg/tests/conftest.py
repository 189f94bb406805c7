import sys

import numpy as np
import pytest

from lifeloop import plant as pl


@pytest.fixture(scope="session")
def params():
    x, pp = pl.initial_state(pl.PlantParams())
    return pp.to_vector()


@pytest.fixture(scope="session")
def x0():
    x, _ = pl.initial_state(pl.PlantParams())
    return x


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def nominal_u():
    return np.array([0.03, 0.8, 0.0])


def nominal_d(W=250.0):
    return np.array([W, 40.0, 1.0, 0.0, 101325.0, 0.0, 1.0, 0.0])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
    passed = sum(line.startswith("[PASS]") for line in results.values())
    terminalreporter.write_line(f"{passed}/{len(results)} criteria pass")
