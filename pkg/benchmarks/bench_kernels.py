"""Time the RK4 kernels and a full mean-field solve with and without numba.

Each backend runs in its own interpreter because the switch is read at
import time. Usage: python3 benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import json
import os
import subprocess
import sys

WORKLOAD = r"""
import json, time
import numpy as np
from mfchoice import backend, kernels
from mfchoice.scenario import swarm_scenario
from mfchoice.meanfield import find_fixed_point

repeat = {repeat}
sc = swarm_scenario(q=40.0)
atom = sc.atoms[0]
grid = sc.grid
args = (atom.A, np.ascontiguousarray(atom.A.T), atom.S, 40.0 * np.eye(2), 1200.0 * np.eye(2), grid.dt, True, grid.steps)

t0 = time.perf_counter()
kernels.riccati_backward(*args)
first = time.perf_counter() - t0

def best(fn):
    out = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t)
    return min(out)

find_fixed_point(sc)
print(json.dumps({{
    "backend": backend(),
    "riccati_first_call_s": first,
    "riccati_K2000_s": best(lambda: kernels.riccati_backward(*args)),
    "fixed_point_q40_s": best(lambda: find_fixed_point(sc)),
}}))
"""


def run(disable, repeat):
    env = dict(os.environ, MFCHOICE_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run(
        [sys.executable, "-c", WORKLOAD.format(repeat=repeat)],
        env=env, check=True, capture_output=True, text=True,
    )
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    rows = [run(False, args.repeat), run(True, args.repeat)]
    keys = ["riccati_first_call_s", "riccati_K2000_s", "fixed_point_q40_s"]
    print(f"{'backend':<8}" + "".join(f"{k:>24}" for k in keys))
    for r in rows:
        print(f"{r['backend']:<8}" + "".join(f"{r[k]:>24.4f}" for k in keys))
    for k in keys[1:]:
        print(f"speedup {k}: {rows[1][k] / rows[0][k]:.1f}x")


if __name__ == "__main__":
    main()
