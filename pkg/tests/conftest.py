import json
from functools import lru_cache
from pathlib import Path

import pytest

from opamp_lab import bundled, netlist, opsolver

FIXTURES = json.loads((Path(__file__).parent / "fixtures" / "reference_values.json").read_text())

# Published branch currents per node: (I_D1,2 per branch, I_D6,7)
CURRENTS = {"180": (7.423e-9, 200.9e-9), "90": (11.512e-9, 240.87e-9), "45": (14.228e-9, 252.29e-9)}
NODES = tuple(CURRENTS)


@lru_cache(maxsize=None)
def load_bundled(node):
    return netlist.parse(bundled(f"two_stage_{node}.sp").read_text())


@lru_cache(maxsize=None)
def bundled_op(node):
    return opsolver.solve_op(load_bundled(node))


@pytest.fixture(scope="session")
def fixtures():
    return FIXTURES


@pytest.fixture(params=NODES, scope="session")
def node(request):
    return request.param


# Acceptance criteria outcomes, printed once at the end of the run.
ACCEPTANCE = {}


def record(number, title, ok, detail):
    ACCEPTANCE[number] = (title, bool(ok), detail)
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
