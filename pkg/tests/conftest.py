import numpy as np
import pytest

from girsanov_grad import model


@pytest.fixture(scope="session")
def bm_exit():
    return model.brownian_exit(b=1.0, dt=1e-3, bridge=True)


@pytest.fixture(scope="session")
def dwell():
    return model.double_well()


@pytest.fixture(scope="session")
def quad():
    return model.fixed_horizon()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(pytestconfig):
    return pytestconfig.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
