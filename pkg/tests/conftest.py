import numpy as np
import pytest

from ucap import kernels


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=kernels.available())
def backend(request):
    prev = kernels.backend
    kernels.use(request.param)
    yield request.param
    kernels.use(prev)


def central_diff(f, arr, idx, h=1e-5):
    old = arr[idx]
    arr[idx] = old + h
    up = f()
    arr[idx] = old - h
    down = f()
    arr[idx] = old
    return (up - down) / (2 * h)


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


# one line per acceptance criterion, printed after the run whatever the capture mode
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
