import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from robust_tpp.intensity import BasisSpec, HorizonSpec

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def report():
    def record(number, ok, detail):
        ACCEPTANCE[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return record


@pytest.fixture
def horizon():
    return HorizonSpec(24.0, 2)


@pytest.fixture
def basis():
    return BasisSpec.gaussian(24.0, 6)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
