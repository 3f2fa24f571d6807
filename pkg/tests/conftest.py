import numpy as np
import pytest

from spade.imaging import SpectralImage


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_cube(rng, shape, f32=False):
    data = rng.normal(size=shape)
    if f32:
        data = data.astype(np.float32).astype(np.float64)
    lam = shape[0]
    return SpectralImage(data, [700.0 + 10 * i for i in range(lam)], 0.195, 0.2)


# one line per acceptance criterion, appended by tests/test_acceptance.py
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
