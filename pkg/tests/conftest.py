import numpy as np
import pytest

from vflab import GridSpec

# acceptance results: criterion number -> (passed, detail)
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


@pytest.fixture
def torus2():
    return GridSpec.uniform(2, 32, 2 * np.pi)


@pytest.fixture
def torus3():
    return GridSpec.uniform(3, 16, 2 * np.pi)
