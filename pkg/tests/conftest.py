from __future__ import annotations

import numpy as np
import pytest

from nlgrass.embedding import Embedding
from nlgrass.mesh import build_grid
from nlgrass.tubular import build_tubular_chart


def line(grid, a=0.0, b=1.0, angle=0.0):
    s = grid.nodes[:, 0]
    x = a + (b - a) * s
    return Embedding(grid, np.column_stack([x * np.cos(angle), x * np.sin(angle)]))


def circle(grid, r=1.0):
    t = grid.nodes[:, 0]
    return Embedding(grid, r * np.column_stack([np.cos(t), np.sin(t)]))


@pytest.fixture
def interval64():
    return build_grid("interval", 64)


@pytest.fixture
def interval_chart(interval64):
    return build_tubular_chart(line(interval64), 0.3, 0.45)


@pytest.fixture
def affine_chart(interval64):
    return build_tubular_chart(line(interval64), 0.3, 0.45, stretch="affine")


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for text in lines:
            terminalreporter.write_line(text)
