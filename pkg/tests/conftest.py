import numpy as np
import pytest

from dislo.discrete import EnergySpec
from dislo.geometry import Domain
from dislo.lattice import LatticeSpec, make_mesh


@pytest.fixture(scope="session")
def unit_square():
    return Domain.unit_square()


@pytest.fixture(scope="session")
def mesh8(unit_square):
    return make_mesh(unit_square, 1 / 8)


@pytest.fixture(scope="session")
def spec8(mesh8):
    return EnergySpec.nearest_neighbour(mesh8)


@pytest.fixture(scope="session")
def mesh16(unit_square):
    return make_mesh(unit_square, 1 / 16)


@pytest.fixture(scope="session")
def spec16(mesh16):
    return EnergySpec.nearest_neighbour(mesh16)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance verdicts, printed together at the end of the run
_VERDICTS = {}


@pytest.fixture(scope="session")
def verdict():
    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        _VERDICTS[number] = f"[{number:2d}] {'PASS' if ok else 'FAIL'}  {title}" \
            + (f"  ({detail})" if detail else "")
        print(_VERDICTS[number])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance")
        for k in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[k])
