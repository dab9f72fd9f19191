"""Compiled and pure-numpy kernels must agree; midpoint interpolation must be fourth order."""
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from mfchoice import backend, kernels

WORKLOAD = r"""
import json
import numpy as np
from mfchoice import backend
from mfchoice.meanfield import find_fixed_point
from mfchoice.scenario import swarm_scenario
sol = find_fixed_point(swarm_scenario(q=20.0, steps=400))
b = sol.bundle(0, 1)
print(json.dumps({
    "backend": backend(),
    "xbar": sol.xbar.values.tolist(),
    "gamma0": b.gamma.values[0].tolist(),
    "beta0": b.beta.values[0].tolist(),
    "fractions": list(sol.fractions),
    "iterations": sol.iterations,
}))
"""


def _run(disable):
    env = dict(os.environ, MFCHOICE_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", WORKLOAD], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


@pytest.mark.slow
def test_numba_and_numpy_backends_agree():
    fast, plain = _run(False), _run(True)
    assert plain["backend"] == "numpy"
    assert fast["iterations"] == plain["iterations"]
    for key in ("xbar", "gamma0", "beta0", "fractions"):
        a, b = np.asarray(fast[key]), np.asarray(plain[key])
        assert np.allclose(a, b, rtol=1e-10, atol=1e-10), key


def test_backend_name():
    assert backend() in ("numba", "numpy")


def test_hermite_midpoints_fourth_order():
    errs = []
    for K in (20, 40, 80):
        t = np.linspace(0.0, 1.0, K + 1)
        dt = t[1] - t[0]
        mid = kernels.hermite_midpoints(np.sin(3 * t), 3 * np.cos(3 * t), dt)
        errs.append(np.max(np.abs(mid - np.sin(3 * (t[:-1] + dt / 2)))))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 3.8)


def test_linear_forward_matches_expm():
    from scipy.linalg import expm

    C0 = np.array([[0.0, 1.0], [-2.0, -0.3]])
    K, dt = 200, 0.01
    C = np.ascontiguousarray(np.broadcast_to(C0, (K + 1, 2, 2)))
    F = np.zeros((K + 1, 2, 1))
    X0 = np.array([[1.0], [0.0]])
    out, status = kernels.linear_forward(C, np.ascontiguousarray(C[:-1]), F, np.zeros((K, 2, 1)), X0, dt)
    assert status == -1
    assert np.allclose(out[-1], expm(C0 * K * dt) @ X0, atol=1e-9)


def test_riccati_divergence_status():
    A = np.zeros((1, 1))
    S = np.eye(1)
    # dG/dt = G^2 - q with a huge negative terminal value blows up backward
    values, status = kernels.riccati_backward(A, A, S, np.eye(1), -1e6 * np.eye(1), 0.01, True, 100)
    assert status >= 0
