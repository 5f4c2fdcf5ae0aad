import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def rand_img(rng):
    return rng.random((16, 16, 3))


def gray(value, size=4):
    return np.full((size, size, 3), float(value))


def random_instance(rng, T=5, R=3, de=6, dh=4, **kw):
    from omnedit.grounding import GroundingInstance

    w = rng.random(3)
    return GroundingInstance(
        tokens=rng.standard_normal((T, de)),
        hidden=rng.standard_normal((T, dh)),
        operation=rng.standard_normal(dh),
        module_keys=rng.standard_normal((3, dh)),
        module_weights=w / w.sum(),
        region_features=rng.standard_normal((R, 3, de)),
        **kw,
    )


# one summary line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
