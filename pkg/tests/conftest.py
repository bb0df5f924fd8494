import numpy as np
import pytest

from tsakit import packaged_network_path
from tsakit.grid_model import load_network
from tsakit.tds import solve_equilibrium


@pytest.fixture(scope="session")
def ieee39():
    return load_network(packaged_network_path())


@pytest.fixture(scope="session")
def ieee39_eq06(ieee39):
    """Equilibrium of the bundled network with a uniform 0.6 motor share."""
    net = ieee39.with_motor_fraction(0.6)
    return net, solve_equilibrium(net)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        import acceptance_report
    except ImportError:
        return
    if acceptance_report.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_report.LINES:
            terminalreporter.write_line(line)
