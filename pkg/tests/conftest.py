import os

os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import numpy as np  # noqa: E402
import pytest  # noqa: E402
from hypothesis import HealthCheck, settings  # noqa: E402

from ccucp.instance import builtin_deterministic_instance, builtin_stochastic_instance  # noqa: E402
from ccucp.reference import solve_deterministic  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def det():
    return builtin_deterministic_instance()


@pytest.fixture(scope="session")
def sto():
    return builtin_stochastic_instance()


@pytest.fixture(scope="session")
def det_opt(det):
    return solve_deterministic(det)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
