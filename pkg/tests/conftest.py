import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def scene128():
    from fba.shake import default_ground_truth

    return default_ground_truth(128)


def checkerboard(n=256, cell=16):
    yy, xx = np.mgrid[0:n, 0:n]
    return (((yy // cell) + (xx // cell)) % 2).astype(np.float64)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, line = results[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {number:2d}  {line}")
