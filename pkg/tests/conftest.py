import numpy as np
import pytest

from degree_sr.imaging import sobel_edges
from degree_sr.network import DegreeConfig, DegreeNetwork


@pytest.fixture
def small_net():
    return DegreeNetwork.build(DegreeConfig(recurrences=2, channels=8, seed=0))


def random_batch(rng, n=1, size=9, dtype=np.float64):
    """(y, y_edges, x, x_edges) for a random batch of luminance patches."""
    y = rng.random((n, 1, size, size))
    x = np.clip(y + 0.1 * rng.standard_normal(y.shape), 0, 1)
    return (y.astype(dtype), sobel_edges(y[:, 0]).astype(dtype), x.astype(dtype), sobel_edges(x[:, 0]).astype(dtype))


def randomize_biases(net, rng, scale=0.05):
    for p in net.params:
        p.bias[:] = rng.normal(0, scale, p.bias.shape)


_CRITERIA: dict = {}


@pytest.fixture
def criterion(request):
    """Call ``criterion(n, ok, detail)`` once per acceptance criterion; the line is echoed at session end."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
