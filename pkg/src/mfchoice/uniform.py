"""Uniform populations: one type atom with a common terminal weight M.

Then every branch shares the same Gamma, basins are halfspaces, and for a
fixed split lambda the mean path is affine,

    xbar(t) = R1(t) mu0 + R2(t) p_lambda,    p_lambda = sum_j lambda_j p_j.

Summing the branch offsets with the basin masses turns the fixed-point
condition into an ordinary LQ tracking problem for xbar itself: with
y = Gamma xbar + sum_j P_j beta_j,

    dxbar/dt = A xbar - S y,      dy/dt = -A^T y - q (I + L^T) xbar,
    xbar(0) = mu0,                y(T) = M (xbar(T) - p_lambda),

so y = P xbar + h with P the Riccati solution for state weight q (I + L^T)
and h linear in p_lambda. R1 and R2 come from one forward sweep.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConvergenceError, IntegrationDivergedError, RiccatiDivergedError, ScenarioError
from .meanfield import MeanFieldOperator, compute_basins
from .numerics import SampledPath, integrate_samples

BISECTION_STEPS = 60


@dataclass
class UniformPathBasis:
    R1: SampledPath
    R2: SampledPath
    mu0: np.ndarray
    P: SampledPath = field(default=None, repr=False)

    @property
    def grid(self):
        return self.R1.grid

    def path(self, p_lambda, mu0=None):
        mu0 = self.mu0 if mu0 is None else np.asarray(mu0, dtype=float)
        p = np.asarray(p_lambda, dtype=float)
        return SampledPath(self.grid, self.R1.values @ mu0 + self.R2.values @ p)


def common_terminal_weight(atom):
    M = np.asarray(atom.M, dtype=float)
    if not np.all(M == M[0]):
        raise ScenarioError("atoms.M", "the uniform fast path needs one terminal weight for all destinations")
    return float(M[0])


def solve_path_basis(atom, q, L, grid, mu0=None):
    """R1, R2 for a single atom with a common terminal weight."""
    M = common_terminal_weight(atom)
    n = atom.n
    A, S = atom.A, atom.S
    At = np.ascontiguousarray(A.T)
    I = np.eye(n)
    Q = q * (I + L.T)
    symmetric = bool(np.allclose(Q, Q.T, rtol=0.0, atol=1e-14 * max(1.0, np.abs(Q).max())))
    P, status = kernels.riccati_backward(A, At, S, np.ascontiguousarray(Q), M * I, grid.dt, symmetric, grid.steps)
    if status >= 0:
        raise RiccatiDivergedError(int(status))
    P[-1] = M * I
    P_rate = P @ S @ P - P @ A - At @ P - Q
    P_mid = kernels.hermite_midpoints(P, P_rate, grid.dt)

    C_h = np.ascontiguousarray(P @ S - At)
    C_h_mid = np.ascontiguousarray(P_mid @ S - At)
    zeros = np.zeros((grid.steps + 1, n, n))
    H, status = kernels.linear_backward(C_h, C_h_mid, zeros, zeros[:-1], -M * I, grid.dt)
    if status >= 0:
        raise IntegrationDivergedError(int(status), what="uniform offset basis")
    H_mid = kernels.hermite_midpoints(H, C_h @ H, grid.dt)

    C = np.ascontiguousarray(A - S @ P)
    C_mid = np.ascontiguousarray(A - S @ P_mid)
    F = np.zeros((grid.steps + 1, n, 2 * n))
    F_mid = np.zeros((grid.steps, n, 2 * n))
    F[:, :, n:] = -(S @ H)
    F_mid[:, :, n:] = -(S @ H_mid)
    X0 = np.concatenate([I, np.zeros((n, n))], axis=1)
    X, status = kernels.linear_forward(C, C_mid, F, F_mid, X0, grid.dt)
    if status >= 0:
        raise IntegrationDivergedError(int(status), what="uniform path basis")
    mu0 = np.zeros(n) if mu0 is None else np.asarray(mu0, dtype=float)
    return UniformPathBasis(
        SampledPath(grid, np.ascontiguousarray(X[:, :, :n])),
        SampledPath(grid, np.ascontiguousarray(X[:, :, n:])),
        mu0,
        SampledPath(grid, P),
    )


def _require_uniform(scenario):
    if len(scenario.atoms) != 1:
        raise ScenarioError("atoms", "the uniform fast path needs exactly one type atom")
    return scenario.atoms[0]


def basis_for(scenario, grid=None, mode=None):
    atom = _require_uniform(scenario)
    grid = grid or scenario.grid
    L = scenario.coupling_matrix(mode or scenario.mode)
    return solve_path_basis(atom, scenario.q, L, grid, scenario.initial.mean_vector())


def _as_fractions(lam, l):
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if lam.size == 1 and l == 2:
        lam = np.array([lam[0], 1.0 - lam[0]])
    if lam.size != l:
        raise ValueError(f"expected {l} fractions, got {lam.size}")
    return lam


class FractionMap:
    """F(lambda): split -> affine mean path -> basins -> new split."""

    def __init__(self, scenario, basis=None, grid=None, mode=None, measure=None):
        _require_uniform(scenario)
        self.scenario = scenario
        self.op = MeanFieldOperator(scenario, grid, mode, measure)
        self.basis = basis or basis_for(scenario, self.op.grid, self.op.mode)

    def p_lambda(self, lam):
        lam = _as_fractions(lam, self.scenario.l)
        return lam @ self.scenario.destinations

    def mean_path(self, lam):
        return self.basis.path(self.p_lambda(lam))

    def rows(self, lam):
        bundles = self.op.bundles(self.mean_path(lam))
        return compute_basins([bundles[0, j] for j in range(self.scenario.l)])

    def __call__(self, lam):
        mass, _ = self.op.measure.basin_moments(self.rows(lam))
        mass = np.clip(mass, 0.0, None)
        return mass / mass.sum()


def fraction_map(lam, scenario, basis=None, measure=None):
    """New fraction vector produced by the split ``lam``."""
    return FractionMap(scenario, basis, measure=measure)(lam)


@dataclass
class BisectionResult:
    fractions: np.ndarray
    residual: float
    steps: int
    bracket_history: list
    flagged: bool
    basis: UniformPathBasis

    @property
    def lam(self):
        return float(self.fractions[0])

    def mean_path(self, destinations):
        return self.basis.path(self.fractions @ destinations)


def solve_lambda_bisection(scenario, tol=None, basis=None, measure=None):
    """Split lambda* with |F(lambda*)_1 - lambda*| <= tol, found by bisection on [0, 1].

    If g = F_1 - id has the same sign at both ends the endpoint with the
    smaller |g| is returned with ``flagged`` set.
    """
    if scenario.l != 2:
        raise ScenarioError("destinations", "bisection needs exactly two destinations")
    tol = scenario.solver.tol if tol is None else tol
    F = FractionMap(scenario, basis, measure=measure)

    def g(lam):
        return float(F(lam)[0]) - lam

    lo, hi = 0.0, 1.0
    g_lo, g_hi = g(lo), g(hi)
    history = [(lo, hi, g_lo, g_hi)]

    def done(lam, val, steps, flagged=False):
        return BisectionResult(np.array([lam, 1.0 - lam]), abs(val), steps, history, flagged, F.basis)

    if abs(g_lo) <= tol:
        return done(lo, g_lo, 0)
    if abs(g_hi) <= tol:
        return done(hi, g_hi, 0)
    if np.sign(g_lo) == np.sign(g_hi):
        return (done(lo, g_lo, 0, True) if abs(g_lo) <= abs(g_hi) else done(hi, g_hi, 0, True))
    for step in range(1, BISECTION_STEPS + 1):
        mid = 0.5 * (lo + hi)
        g_mid = g(mid)
        if abs(g_mid) <= tol:
            history.append((lo, hi, g_lo, g_hi))
            return done(mid, g_mid, step)
        if np.sign(g_mid) == np.sign(g_lo):
            lo, g_lo = mid, g_mid
        else:
            hi, g_hi = mid, g_mid
        history.append((lo, hi, g_lo, g_hi))
    raise ConvergenceError(
        f"bisection bracket [{lo:.17g}, {hi:.17g}] did not reach |g| <= {tol:.1e}", history
    )


# -- closed-form coefficients, kept as an independent cross-check ----------------

def theta_closed_form(scenario, basis, j, k, grid=None):
    """theta1, theta2 (row vectors) for the pair (j, k) from the end values of the basis.

    theta1 = M (p_j - p_k)^T (R1(T) - Phi_cl(T))
    theta2 = M (p_j - p_k)^T (R2(T) - (M/r) int_0^T Phi(t,T)^T B B^T Phi(t,T) dt)
    with Phi_cl the closed-loop transition of the common Gamma.
    """
    atom = _require_uniform(scenario)
    op = MeanFieldOperator(scenario, grid)
    M = common_terminal_weight(atom)
    bundle = op.bundles(None)[0, j]
    Phi_cl, _ = bundle.closed_loop_parts()
    # Phi(t,T)^T = Phi_cl(T) Phi_cl(t)^{-1} is the closed-loop transition from t to T
    trans = Phi_cl[-1] @ np.linalg.inv(Phi_cl)
    BBt = atom.B @ atom.B.T
    gram = integrate_samples(trans @ BBt @ np.swapaxes(trans, -1, -2), op.grid)
    dp = scenario.destinations[j] - scenario.destinations[k]
    theta1 = M * dp @ (basis.R1.values[-1] - Phi_cl[-1])
    theta2 = M * dp @ (basis.R2.values[-1] - (M / atom.r) * gram)
    return theta1, theta2


def theta_numeric(scenario, basis, j, k, grid=None):
    """theta1, theta2 read off the solver: the xbar-dependent part of
    delta_k(0) - delta_j(0) is linear in (mu0, p), probed one coordinate at a time."""
    op = MeanFieldOperator(scenario, grid)
    n = scenario.n

    def gap(xbar):
        b = op.bundles(xbar)
        return float(b[0, k].delta.values[0] - b[0, j].delta.values[0])

    base = gap(None)
    eye = np.eye(n)
    zero = np.zeros(n)
    theta1 = np.array([gap(basis.path(zero, mu0=eye[i])) - base for i in range(n)])
    theta2 = np.array([gap(basis.path(eye[i], mu0=zero)) - base for i in range(n)])
    return theta1, theta2

