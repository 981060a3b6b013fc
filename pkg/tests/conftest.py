import numpy as np
import pytest

from icd_sim.domain import BoxSet
from icd_sim.objectives import QuadraticObjective

W_STATIC = np.array([[3.0, -2, -3], [-1, 4, -4], [-1, -1, 8]])
W_TOPO = np.array([[4.0, -1, -2], [-1, 4, -3], [-1, -1, 8], [-1, -1, -2]])
B_PATH3 = np.array([[0.8, 0.2, 0], [0.2, 0.6, 0.2], [0, 0.2, 0.8]])


@pytest.fixture
def box():
    return BoxSet.cube(-10.0, 10.0, 1)


@pytest.fixture
def three_quadratics():
    return [QuadraticObjective([c]) for c in (1.0, 2.0, 3.0)]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
