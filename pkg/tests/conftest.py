from pathlib import Path

import pytest

from cepd.cli import load_model
from cepd.lattice import Supercell

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def separation():
    """Simple-cubic model with a single attractive nearest-neighbour pair."""
    return load_model(DATA / "separation")


@pytest.fixture(scope="session")
def checkerboard():
    """Simple-cubic model with NN repulsion and a 2a-axis attraction."""
    return load_model(DATA / "checkerboard")


@pytest.fixture(scope="session")
def small_cell(separation):
    ce, _ = separation
    return Supercell(ce.lattice, (2, 2, 2))


def read(name: str) -> str:
    return (DATA / name).read_text()


ACCEPTANCE_LINES: list[str] = []


def report(n: int, ok: bool, detail: str) -> bool:
    """Record one acceptance verdict; the lines are repeated in the terminal summary."""
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
