from __future__ import annotations

import numpy as np
import pytest

from jumptable.device import ConductanceBounds, JumpTablePair, Profile
from jumptable.synthetic import TargetSpec, build_target_tables


@pytest.fixture
def bounds():
    return ConductanceBounds()


@pytest.fixture
def target() -> JumpTablePair:
    return build_target_tables(TargetSpec())


@pytest.fixture
def linear_pair(bounds) -> JumpTablePair:
    return JumpTablePair(Profile.linear(bounds, (2.1, 0.3), 1.0), Profile.linear(bounds, (-0.3, -2.1), 1.0), bounds)


@pytest.fixture(scope="session")
def mnist():
    from jumptable.io import load_mnist

    return load_mnist()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
