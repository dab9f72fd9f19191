"""Exact social optimum of a finite population.

Agents are stacked agent-major, x = (x_1, ..., x_N). Expanding
sum_i q/2 |x_i - Z xbar|^2 with xbar = (1/N) sum_j x_j gives the running
state weight

    Qtilde = q [ I_{Nn} + (1/N) (1 1^T kron L) ],   L = Z^T Z - Z - Z^T.

For a fixed assignment d every agent's terminal penalty is a plain
quadratic, so the stacked problem is LQ with a Riccati/offset pair; the
optimum is the cheapest assignment.
"""
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

from . import kernels
from .errors import EnumerationCapError, IntegrationDivergedError, RiccatiDivergedError, ScenarioError, UncontrollableError
from .numerics import SampledPath, TimeGrid
from .scenario import COOPERATIVE

# RK4 on dG/dt = G S G - ... is stable while dt * M * |S| < ~2.8, but the
# closed-loop terminal miss is only accurate to a few digits below ~0.1
STIFFNESS_BUDGET = 0.1


@dataclass
class StackedSystem:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    N: int
    n: int
    m: int
    atoms: tuple
    x0: np.ndarray  # (N, n)
    S: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        Rinv = np.diag(1.0 / np.diag(self.R))
        self.S = self.B @ Rinv @ self.B.T

    def terminal_weights(self, d):
        return np.array([atom.M[j] for atom, j in zip(self.atoms, d)])


def assemble(scenario, agents):
    """Stack ``agents`` (a list of (atom, x0) pairs) into one LQ system."""
    if not agents:
        raise ScenarioError("agents", "need at least one agent")
    n, m = scenario.n, scenario.m
    atoms = tuple(a for a, _ in agents)
    x0 = np.array([np.asarray(x, dtype=float).reshape(-1) for _, x in agents])
    for i, atom in enumerate(atoms):
        if atom.n != n or atom.m != m:
            raise ScenarioError(f"agents[{i}]", f"expected n={n}, m={m}; got n={atom.n}, m={atom.m}")
        if x0[i].size != n:
            raise ScenarioError(f"agents[{i}].x0", f"expected {n} entries, got {x0[i].size}")
    N = len(agents)
    L = scenario.coupling_matrix(COOPERATIVE)
    Q = scenario.q * (np.eye(N * n) + np.kron(np.ones((N, N)) / N, L))
    Q = 0.5 * (Q + Q.T)
    A = block_diag(*[a.A for a in atoms])
    B = block_diag(*[a.B for a in atoms])
    R = np.diag(np.repeat([a.r for a in atoms], m))
    return StackedSystem(A, B, Q, R, N, n, m, atoms, x0)


def _gamma_mid(system, gamma, dt):
    A, S, Q = system.A, system.S, system.Q
    rates = gamma @ S @ gamma - gamma @ A - A.T @ gamma - Q
    return kernels.hermite_midpoints(gamma, rates, dt)


@dataclass
class AssignmentSolution:
    d: tuple
    cost: float
    gamma: SampledPath
    beta: SampledPath
    delta: SampledPath
    gamma_mid: np.ndarray = field(repr=False, default=None)


class AssignmentSolver:
    """Solves assignments on one stacked system, caching Gamma by terminal weights."""

    def __init__(self, system, destinations, grid):
        self.system = system
        self.destinations = np.asarray(destinations, dtype=float)
        self.grid = grid
        self._gammas = {}
        self._zeros = np.zeros((grid.steps + 1, system.N * system.n))

    def gamma(self, weights):
        key = tuple(weights.tolist())
        if key not in self._gammas:
            sys = self.system
            terminal = np.diag(np.repeat(weights, sys.n))
            values, status = kernels.riccati_backward(
                sys.A, np.ascontiguousarray(sys.A.T), sys.S, sys.Q, terminal,
                self.grid.dt, True, self.grid.steps,
            )
            if status >= 0:
                raise RiccatiDivergedError(int(status))
            values[-1] = terminal
            self._gammas[key] = (values, _gamma_mid(sys, values, self.grid.dt))
        return self._gammas[key]

    def solve(self, d):
        sys = self.system
        d = tuple(int(j) for j in d)
        weights = sys.terminal_weights(d)
        gamma, gamma_mid = self.gamma(weights)
        target = self.destinations[list(d)]  # (N, n)
        wvec = np.repeat(weights, sys.n)
        beta_T = -wvec * target.reshape(-1)
        delta_T = 0.5 * float(np.sum(weights * np.sum(target * target, axis=1)))
        beta, delta, status = kernels.offset_backward(
            gamma, gamma_mid, np.ascontiguousarray(sys.A.T), sys.S,
            self._zeros, self._zeros[:-1], beta_T, delta_T, self.grid.dt,
        )
        if status >= 0:
            raise IntegrationDivergedError(int(status), what="stacked offset")
        x0 = sys.x0.reshape(-1)
        cost = 0.5 * x0 @ gamma[0] @ x0 + beta[0] @ x0 + delta[0]
        return AssignmentSolution(
            d, float(cost), SampledPath(self.grid, gamma), SampledPath(self.grid, beta),
            SampledPath(self.grid, delta), gamma_mid,
        )


def solve_assignment(system, d, destinations, grid):
    """Optimal stacked cost and control data for the fixed assignment ``d``."""
    return AssignmentSolver(system, destinations, grid).solve(d)


@dataclass
class CentralizedSolution:
    d: tuple
    cost: float
    costs: dict
    assignment: AssignmentSolution
    system: StackedSystem
    states: SampledPath  # (K+1, N, n)
    controls: SampledPath  # (K+1, N, m)

    @property
    def per_agent_cost(self):
        return self.cost / self.system.N

    def terminal_distances(self, destinations):
        """Distance of each agent's terminal state to its assigned destination."""
        xT = self.states.values[-1]
        return np.linalg.norm(xT - np.asarray(destinations)[list(self.d)], axis=1)


def optimal_run(system, sol, grid):
    """Stacked closed loop under u = -R^{-1} B^T (Gamma x + beta)."""
    S = system.S
    K = grid.steps
    dim = system.N * system.n
    C = np.ascontiguousarray(system.A - S @ sol.gamma.values)
    C_mid = np.ascontiguousarray(system.A - S @ sol.gamma_mid)
    beta = sol.beta.values
    beta_rate = np.einsum("kij,kj->ki", sol.gamma.values @ S - system.A.T, beta)
    beta_mid = kernels.hermite_midpoints(beta, beta_rate, grid.dt)
    F = np.ascontiguousarray(-(beta @ S.T)[:, :, None])
    F_mid = np.ascontiguousarray(-(beta_mid @ S.T)[:, :, None])
    out, status = kernels.linear_forward(C, C_mid, F, F_mid, system.x0.reshape(dim, 1), grid.dt)
    if status >= 0:
        raise IntegrationDivergedError(int(status), what="stacked closed loop")
    x = out[:, :, 0]
    Rinv = 1.0 / np.diag(system.R)
    u = -(np.einsum("kij,kj->ki", sol.gamma.values, x) + beta) @ system.B * Rinv
    return (
        SampledPath(grid, x.reshape(K + 1, system.N, system.n)),
        SampledPath(grid, u.reshape(K + 1, system.N, system.m)),
    )


def enumeration_size(N, l):
    return l ** N


def exact_social_optimum(scenario, agents, grid=None, cap=None, keep_table=True):
    """Enumerate all l^N assignments lexicographically; the first strict minimum wins."""
    grid = grid or scenario.grid
    cap = scenario.solver.enumeration_cap if cap is None else cap
    N, l = len(agents), scenario.l
    if N * math.log(l) > math.log(cap) + 1e-12:
        raise EnumerationCapError(
            f"{l}^{N} assignments exceed the enumeration cap {cap}; use the mean-field solver instead"
        )
    system = assemble(scenario, agents)
    solver = AssignmentSolver(system, scenario.destinations, grid)
    best = None
    table = {}
    for d in itertools.product(range(l), repeat=N):
        sol = solver.solve(d)
        if keep_table:
            table[d] = sol.cost
        if best is None or sol.cost < best.cost:
            best = sol
    states, controls = optimal_run(system, best, grid)
    return CentralizedSolution(best.d, best.cost, table, best, system, states, controls)


def controllability_rank(A, B):
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return int(np.linalg.matrix_rank(np.hstack(blocks)))


def require_controllable(atoms):
    for i, atom in enumerate(atoms):
        rank = controllability_rank(atom.A, atom.B)
        if rank < atom.n:
            raise UncontrollableError(
                f"agent type {i}: (A, B) has controllability rank {rank} < {atom.n}; "
                "terminal reachability needs every pair controllable"
            )


def stable_steps(horizon, steps, M, S):
    """Smallest step count >= ``steps`` keeping RK4 accurate for terminal weight M."""
    norm = float(np.linalg.norm(S, 2))
    need = math.ceil(horizon * M * norm / STIFFNESS_BUDGET)
    return max(int(steps), need)


@dataclass
class ReachabilityReport:
    schedule: list
    distances: list  # max over agents of distance to the assigned destination
    nearest: list  # max over agents of distance to the nearest destination
    steps: list
    assignments: list
    epsilon: float
    first_within: float = None

    def to_dict(self):
        return {
            "epsilon": self.epsilon,
            "schedule": list(self.schedule),
            "distance_to_assigned": list(self.distances),
            "distance_to_nearest": list(self.nearest),
            "steps": list(self.steps),
            "assignments": [list(d) for d in self.assignments],
            "first_M_within_epsilon": self.first_within,
        }


def reachability_probe(scenario, agents, epsilon, M_schedule, grid=None):
    """Terminal miss distance of the exact optimum as all terminal weights grow.

    The step count is raised where needed so the Riccati sweep stays stable
    for large M.
    """
    require_controllable([a for a, _ in agents])
    grid = grid or scenario.grid
    report = ReachabilityReport(list(M_schedule), [], [], [], [], float(epsilon))
    P = scenario.destinations
    for M in M_schedule:
        scaled = [(atom.with_(M=np.full(scenario.l, float(M))), x0) for atom, x0 in agents]
        Smax = max(float(np.linalg.norm(a.S, 2)) for a, _ in scaled)
        K = stable_steps(grid.horizon, grid.steps, M, np.array([[Smax]]))
        g = TimeGrid(grid.horizon, K)
        sol = exact_social_optimum(scenario, scaled, grid=g, keep_table=False)
        xT = sol.states.values[-1]
        assigned = float(sol.terminal_distances(P).max())
        nearest = float(np.linalg.norm(xT[:, None, :] - P[None], axis=2).min(axis=1).max())
        report.distances.append(assigned)
        report.nearest.append(nearest)
        report.steps.append(K)
        report.assignments.append(sol.d)
        if report.first_within is None and assigned <= epsilon:
            report.first_within = float(M)
    return report
