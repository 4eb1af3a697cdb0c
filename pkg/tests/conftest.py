import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from atwflow.grid import GridSpec, LabelField

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

ACCEPTANCE_LINES: dict = {}


def disk_field(n=64, r=0.3, center=(0.5, 0.5), h=None, num_bounded=1, label=0):
    h = 1.0 / n if h is None else h
    spec = GridSpec(n, n, h)
    X, Y = spec.centers()
    inside = (X - center[0]) ** 2 + (Y - center[1]) ** 2 <= r * r
    return LabelField(spec, num_bounded, np.where(inside, label, num_bounded))


def random_field(rng, width, height, num_bounded, h=1.0, p_exterior=0.3):
    spec = GridSpec(width, height, h)
    lab = rng.integers(0, num_bounded, size=spec.shape)
    lab[rng.random(spec.shape) < p_exterior] = num_bounded
    lab[spec.frame_mask()] = num_bounded
    return LabelField(spec, num_bounded, lab)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
