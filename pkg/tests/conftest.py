import numpy as np
import pytest

from lsweeps.experiments import ExperimentConfig, build_problem, direct_solve


def small_config(q=2, r=None, pps=31, **kw):
    kw.setdefault("pml_wavelengths", 1.0)
    return ExperimentConfig(q=q, r=r, points_per_subdomain=pps, **kw)


@pytest.fixture(scope="session")
def small2():
    """2x2 constant-medium problem on 62x62 bulk points."""
    return build_problem(small_config(2))


@pytest.fixture(scope="session")
def small2_direct(small2):
    return direct_solve(small2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
