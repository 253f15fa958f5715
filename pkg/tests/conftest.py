import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_box():
    from cuboidfit.geometry import Cuboid
    return Cuboid(np.ones(3), np.eye(3), np.zeros(3))


@pytest.fixture
def box_b():
    """Half-size 0.5 box centred on the optical axis at z = 2."""
    from cuboidfit.geometry import Cuboid
    return Cuboid(np.full(3, 0.5), np.eye(3), np.array([0.0, 0.0, 2.0]))


def pytest_terminal_summary(terminalreporter):
    from verdicts import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
