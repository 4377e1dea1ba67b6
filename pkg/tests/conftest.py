import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ionsep.protocols import ProtocolConfig, run_onthefly, run_precompensated, run_reversed

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def onthefly_config():
    return ProtocolConfig()


@pytest.fixture(scope="session")
def precomp_config():
    return ProtocolConfig(mode="precompensated")


@pytest.fixture(scope="session")
def onthefly_result(onthefly_config):
    return run_onthefly(onthefly_config)


@pytest.fixture(scope="session")
def precomp_result(precomp_config):
    return run_precompensated(precomp_config)


@pytest.fixture(scope="session")
def reversal_onthefly(onthefly_config):
    return run_reversed(onthefly_config)


@pytest.fixture(scope="session")
def reversal_precomp(precomp_config):
    return run_reversed(precomp_config)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
