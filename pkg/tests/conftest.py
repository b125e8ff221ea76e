import re

import numpy as np
import pytest

from nmwalk import load_config
from nmwalk.simulate import WalkerSim


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion at the end of the run."""
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py" not in str(getattr(rep, "nodeid", "")):
                continue
            m = re.search(r"test_criterion_(\d+)_(\w+)", rep.nodeid)
            if not m:
                continue
            n = int(m.group(1))
            status = "PASS" if outcome == "passed" else "FAIL"
            lines[n] = f"acceptance criterion {n:2d} [{m.group(2)}]: {status}"
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])


@pytest.fixture(scope="session")
def config():
    return load_config()


@pytest.fixture(scope="session")
def sim(config):
    return WalkerSim(config)


@pytest.fixture(scope="session")
def model(sim):
    return sim.model


@pytest.fixture(scope="session")
def muscles(sim):
    return sim.muscles


@pytest.fixture(scope="session")
def default_walk(sim):
    """One 20 s flat-ground rollout with the shipped default parameters.

    Session-scoped: several suites read from it (it is never mutated).
    """
    return sim.rollout(sim.default_params(), t_max=20.0)
