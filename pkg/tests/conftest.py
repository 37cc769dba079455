import numpy as np
import pytest
from hypothesis import settings

from pqsp.energy import DEFAULT_CACHE
from pqsp.grid import Gaussian, from_profile, make_grid
from pqsp.params import validate_params

settings.register_profile("pqsp", deadline=None, derandomize=True,
                          print_blob=True)
settings.load_profile("pqsp")


@pytest.fixture(autouse=True)
def _fresh_cache():
    DEFAULT_CACHE.clear()
    yield
    DEFAULT_CACHE.clear()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def grid15():
    return make_grid(15.0, 1024)


@pytest.fixture(scope="session")
def classical():
    return validate_params(2, 2, 2, 4, 1)


@pytest.fixture
def gauss15(grid15):
    return from_profile(grid15, Gaussian(1.0, 1.0))


# -- acceptance report --------------------------------------------------------

_ACCEPTANCE = []


@pytest.fixture
def accept(capsys):
    """Record one PASS/FAIL line for an acceptance criterion."""
    def record(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {label}: {detail}"
        _ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
