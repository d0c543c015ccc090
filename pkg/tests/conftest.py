import numpy as np
import pytest

from slpeps.models import Heisenberg


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def model():
    return Heisenberg()


def random_complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def config_index(cfg):
    """Row-major configuration to the dense-vector index (site (0, 0) most significant)."""
    flat = np.asarray(cfg).ravel()
    return int("".join(str(int(b)) for b in flat), 2)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
