import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from crsim.cr_operator import hermite_tensor  # noqa: E402


@pytest.fixture(scope="session")
def tensor4():
    return hermite_tensor(4)


@pytest.fixture(scope="session")
def tensor3(tensor4):
    return hermite_tensor(3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
