import numpy as np
import pytest

from progexp import BridgeLognormal, make_grid, simulate_brownian

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def bridge_case():
    """Moderate bridge ensemble shared by the unit tests: 20k paths, K = 100."""
    grid = make_grid(1.0, 100)
    ens = simulate_brownian(grid, 1, 20_000, seed=11)
    model = BridgeLognormal(2.0)
    return grid, ens, model, model.sample(ens)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
