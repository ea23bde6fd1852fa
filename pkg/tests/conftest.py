import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from dastraffic import sim  # noqa: E402


@pytest.fixture(scope="session")
def rc60mix():
    """The default occupancy trial, simulated once per session."""
    return sim.simulate(sim.preset_scene("rc60mix", seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; the test still asserts on the outcome."""

    def record(n, passed, detail):
        line = f"criterion {n:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE[n] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
