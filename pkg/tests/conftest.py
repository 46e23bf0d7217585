import numpy as np
import pytest
from scipy import ndimage

from aad.fields import FrameBuffer


def smooth_texture(size=256, seed=0, sigma=3.0):
    """Periodic band-limited texture in [0, 255]; rolling it is an exact shift."""
    rng = np.random.default_rng(seed)
    tex = ndimage.gaussian_filter(rng.normal(size=(size, size)), sigma, mode="wrap")
    tex = (tex - tex.min()) / (tex.max() - tex.min())
    return 20.0 + 215.0 * tex


def shifted_pair(dx, dy, size=256, seed=0):
    """``prev`` and ``next`` with next(x + d) == prev(x)."""
    base = smooth_texture(size, seed)
    return FrameBuffer(base, 0), FrameBuffer(np.roll(base, (dy, dx), axis=(0, 1)), 1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance lines are collected here and printed after the test summary.
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[2:])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
