from __future__ import annotations

import numpy as np
import pytest

from polytransport.grids import SpatialGrid
from polytransport.problem import build_problem, reference_config


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


@pytest.fixture(scope="session")
def small_reference():
    """Reference configuration on a coarse grid for fast checks."""
    cfg = reference_config()
    return build_problem(cfg, SpatialGrid(16, 13))


@pytest.fixture(scope="session")
def reference():
    return build_problem(reference_config())


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(module.RESULTS):
        terminalreporter.write_line(module.RESULTS[n])
