import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pbfcontrol.fem import LTI_ALUMINUM, thermal_system
from pbfcontrol.mesh import build_mesh
from pbfcontrol.shapes import block, rectangle

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture
def cube():
    return build_mesh(block(1, 1, 1))


@pytest.fixture
def cube_sys(cube):
    return thermal_system(cube, LTI_ALUMINUM)


@pytest.fixture
def strip2d():
    """Two unit quads side by side: 6 nodes, two top edges."""
    return build_mesh(rectangle(2, 1))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[num])
