import numpy as np
import pytest

from trapdd.equilibrium import SimParams
from trapdd.meshfield import PotentialPair, build_grid


def make_params(n_cells=32, family="constant", amplitude=0.0, family_p=None,
                amplitude_p=None, **kw):
    grid = build_grid(n_cells)
    pot = PotentialPair.from_family(grid, family, amplitude, family_p, amplitude_p)
    return SimParams(pot, **kw)


@pytest.fixture
def flat():
    return make_params(32)


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)


# one line per acceptance criterion, printed in the terminal summary
_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance_log():
    def log(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return passed
    return log


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
