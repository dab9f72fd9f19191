import sys

import numpy as np
import pytest

from mfchoice.meanfield import find_fixed_point
from mfchoice.scenario import (
    COOPERATIVE,
    NONCOOPERATIVE,
    AgentTypeAtom,
    GaussianInitial,
    PointsInitial,
    Scenario,
    swarm_scenario,
)


def scalar_atom(A=0.0, B=1.0, r=1.0, M=(1.0,), weight=1.0):
    return AgentTypeAtom(A=[[A]], B=[[B]], r=r, M=list(M), weight=weight)


def scalar_scenario(q=1.0, Z=-1.0, M=10.0, mean=0.2, var=0.25, steps=500, horizon=1.0, mode=COOPERATIVE, **kw):
    """Binary choice on the line: targets -1 and +1, integrator dynamics."""
    atom = scalar_atom(M=(M, M))
    initial = kw.pop("initial", None) or GaussianInitial([mean], [[var]])
    return Scenario(
        horizon=horizon, q=q, Z=[[Z]], destinations=[[-1.0], [1.0]], atoms=[atom],
        initial=initial, steps=steps, mode=mode, **kw,
    )


def symmetric_scenario(q=1.0, steps=400):
    """Mirror-symmetric P0 (explicit points) and destinations."""
    pts = np.array([[-0.9], [-0.4], [-0.1], [0.1], [0.4], [0.9]])
    return scalar_scenario(q=q, steps=steps, initial=PointsInitial(pts))


@pytest.fixture(scope="session")
def swarm_q0():
    sc = swarm_scenario(q=0.0)
    return sc, find_fixed_point(sc)


@pytest.fixture(scope="session")
def swarm_q40_coop():
    sc = swarm_scenario(q=40.0, mode=COOPERATIVE)
    return sc, find_fixed_point(sc)


@pytest.fixture(scope="session")
def swarm_q40_noncoop():
    sc = swarm_scenario(q=40.0, mode=NONCOOPERATIVE)
    return sc, find_fixed_point(sc)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
