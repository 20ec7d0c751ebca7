import numpy as np
import pytest

from fedactive import nn


def finite_diff(f, x, h=1e-6):
    """Central differences of a scalar function over a flat vector."""
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-8))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_net(rng):
    spec = nn.ModelSpec((4, 6, 3))
    return spec, nn.init_params(spec, rng)


# criterion number -> (status, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def record_criterion(number: int, passed: bool | None, detail: str) -> str:
    status = "NOT RUN" if passed is None else ("PASS" if passed else "FAIL")
    ACCEPTANCE[number] = (status, detail)
    line = f"criterion {number}: {status} - {detail}"
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {status} - {detail}")
