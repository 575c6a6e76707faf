import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from schelling1d import ProcessParams, build_state

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make(labels: str, w: int, tau="1/2", rho=None):
    n = len(labels)
    if rho is None:
        rho = "1/2"
    return build_state(ProcessParams(n, w, tau, rho), labels)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for num in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[num])
