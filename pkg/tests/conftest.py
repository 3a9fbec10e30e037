import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from twopoint.model import MomentInfo, ProblemData  # noqa: E402


@pytest.fixture
def newsvendor():
    return ProblemData([1.0], [[1.0]], [100.0], [3.0], [[1.0]], [[1.0]])


@pytest.fixture
def nv_moments():
    return MomentInfo([10.0], [math.sqrt(10.0)])


@pytest.fixture
def identity2():
    return ProblemData([1.0, 1.0], [[1.0, 1.0]], [100.0], [3.0, 3.0], np.eye(2), np.eye(2))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"ACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'}  {detail}")
