import sys

import numpy as np
import pytest

from obslab.discretize import build_grid
from obslab.geometry import SolidRegion, Torus


@pytest.fixture
def torus2():
    return Torus(2, 1.0)


@pytest.fixture
def grid128(torus2):
    return build_grid(torus2, 128)


@pytest.fixture
def unit_box(torus2):
    return SolidRegion.box(torus2, [0.25, 0.25], [0.75, 0.75])


@pytest.fixture
def rng():
    return np.random.default_rng(2024)



def pytest_terminal_summary(terminalreporter):
    # the acceptance module keeps its results; print them once at the end
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(module.RESULTS):
        terminalreporter.write_line(module.line(module.RESULTS[number]))
