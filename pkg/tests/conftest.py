import numpy as np
import pytest

from plinfer.core import RngStream


@pytest.fixture
def rng():
    return RngStream(12345)


@pytest.fixture
def gen():
    return np.random.default_rng(7)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            lines += [value for name, value in getattr(rep, "user_properties", ()) if name == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
