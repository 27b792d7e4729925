import numpy as np
import pytest

from skewcwm import _backend, specfun

BACKENDS = ["compiled", "python"] if _backend.compiled_kernels is not None else ["python"]

# Lines recorded by the acceptance suite, echoed in the terminal summary.
ACCEPTANCE_LINES: list = []


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    mod = _backend.compiled_kernels if request.param == "compiled" else _backend.python_kernels
    monkeypatch.setattr(specfun, "kernels", mod)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240521)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
