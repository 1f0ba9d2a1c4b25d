import time

import numpy as np
import pytest

from planelike.model import ModelSpec
from planelike.solver import pure_phase_minimize


@pytest.fixture(scope="session")
def model():
    return ModelSpec()


@pytest.fixture(scope="session")
def phases8(model):
    return pure_phase_minimize(model, 8, 2)


@pytest.fixture(scope="session")
def phases4(model):
    return pure_phase_minimize(model, 4, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --------------------------------------------------------- acceptance summary

_CRITERIA = {}


@pytest.fixture
def criterion(request):
    """Timer for an acceptance criterion; the summary prints one line per criterion."""
    num = request.node.get_closest_marker("criterion").args[0]
    start = time.perf_counter()
    info = {"num": num, "detail": "", "elapsed": lambda: time.perf_counter() - start}
    yield info
    info["seconds"] = time.perf_counter() - start
    _CRITERIA[request.node.nodeid] = info


def pytest_terminal_summary(terminalreporter):
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" and outcome == "passed":
                continue
            info = _CRITERIA.get(rep.nodeid)
            if info is None:
                continue
            rows.append((info["num"], "PASS" if outcome == "passed" else "FAIL", info, rep.nodeid))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for num, status, info, nodeid in sorted(rows, key=lambda r: r[0]):
        name = nodeid.split("::")[-1]
        line = f"criterion {num:2d} {status}  {name}  ({info.get('seconds', 0.0):.1f} s)"
        if info["detail"]:
            line += f"  {info['detail']}"
        terminalreporter.write_line(line)
