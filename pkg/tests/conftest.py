import numpy as np
import pytest

from unfitted_bddc.experiments import ExperimentConfig, discretize


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def sphere_id1():
    """Nitsche discretization of the default sphere on the coarsest mesh."""
    return discretize(ExperimentConfig(), 16)


@pytest.fixture(scope="session")
def sphere_id1_neumann():
    return discretize(ExperimentConfig(bc="neumann"), 16)


def uncut_square(n=16, ratio=8):
    cfg = ExperimentConfig(geometry="box", cells=[n], ratio=ratio, geometry_params={"dim": 2})
    return cfg, discretize(cfg, n)


ACCEPTANCE_LINES = []


def record_criterion(name, ok, detail):
    """Queue a one-line verdict for the terminal summary."""
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
