import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vfx.fock import enumerate_basis  # noqa: E402
from vfx.torus import enumerate_lattice  # noqa: E402

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def small_lattice():
    return enumerate_lattice(2.0)


@pytest.fixture(scope="session")
def small_basis(small_lattice):
    return enumerate_basis(small_lattice, 3)


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
