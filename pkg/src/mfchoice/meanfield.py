"""Infinite-population machinery: basins of attraction, the mean-path map G,
its damped Picard fixed point, assumption diagnostics, and the asymptotic
per-agent social cost.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from . import kernels
from .errors import ConvergenceError, IntegrationDivergedError
from .numerics import SampledPath, integrate_samples
from .riccati import make_bundle, solve_gamma
from .scenario import COOPERATIVE, GaussianInitial

log = logging.getLogger(__name__)

HALFSPACE_RTOL = 1e-12
MIN_DAMPING = 1.0 / 64


# -- basins ---------------------------------------------------------------

@dataclass
class ClassifierRows:
    """Pairwise quadric coefficients for one type atom.

    x lies in basin j iff for all k:
        x^T quad[j, k] x + lin[j, k]^T x + const[j, k] <= 0,
    where quad = (G_j(0) - G_k(0))/2, lin = b_j(0) - b_k(0), const = c_j(0) - c_k(0).
    """

    quad: np.ndarray
    lin: np.ndarray
    const: np.ndarray

    @property
    def l(self):
        return self.const.shape[0]

    def is_halfspace(self):
        scale = max(1.0, float(np.abs(self.lin).max()), float(np.abs(self.const).max()))
        return bool(np.abs(self.quad).max() <= HALFSPACE_RTOL * scale)

    def pairwise(self, x):
        x = np.atleast_2d(x)
        return (
            np.einsum("ni,jkil,nl->jkn", x, self.quad, x)
            + np.einsum("jki,ni->jkn", self.lin, x)
            + self.const[:, :, None]
        )

    def classify(self, x):
        """Basin index of each row of ``x``; ties go to the smallest index."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        inside = np.all(self.pairwise(x) <= 0.0, axis=1)  # (l, N)
        found = inside.any(axis=0)
        out = np.argmax(inside, axis=0)
        if not found.all():
            # rounding can break transitivity right on a boundary; fall back to the cheapest branch
            costs = self._costs(x[~found])
            out[~found] = np.argmin(costs, axis=0)
        return out

    def _costs(self, x):
        return self.pairwise(x)[:, 0, :]


def compute_basins(bundles):
    """Classifier rows from the l bundles of one atom, all solved against the same xbar."""
    G0 = np.array([b.gamma.values[0] for b in bundles])
    b0 = np.array([b.beta.values[0] for b in bundles])
    c0 = np.array([float(b.delta.values[0]) for b in bundles])
    quad = 0.5 * (G0[:, None] - G0[None, :])
    lin = b0[:, None] - b0[None, :]
    const = c0[:, None] - c0[None, :]
    return ClassifierRows(quad, lin, const)


@dataclass
class BasinClassifier:
    rows: list

    def classify(self, x, atom=0):
        return self.rows[atom].classify(x)

    def to_dict(self):
        return {
            "atoms": [
                {
                    "quadratic": r.quad.tolist(),
                    "linear": r.lin.tolist(),
                    "constant": r.const.tolist(),
                    "halfspace": r.is_halfspace(),
                }
                for r in self.rows
            ]
        }


# -- the initial-state measure used inside G --------------------------------

class InitialMeasure:
    """How G integrates over P0.

    Explicit point lists are summed exactly. Gaussians use closed-form
    halfspace integrals when the basins are two complementary halfspaces,
    and a fixed-seed sample of ``mc_samples`` points otherwise.
    """

    def __init__(self, initial, mc_samples=10_000, seed=0):
        self.initial = initial
        self.mc_samples = int(mc_samples)
        self.seed = seed
        self._samples = None

    @property
    def is_gaussian(self):
        return isinstance(self.initial, GaussianInitial)

    @property
    def samples(self):
        if self._samples is None:
            if self.is_gaussian:
                rng = np.random.default_rng(self.seed)
                self._samples = self.initial.sample(rng, self.mc_samples)
            else:
                self._samples = self.initial.points
        return self._samples

    def mean(self):
        return self.initial.mean_vector()

    def second_moment(self):
        return self.initial.second_moment()

    def expected_norm(self):
        if self.is_gaussian and np.allclose(self.initial.covariance, 0.0):
            return float(np.linalg.norm(self.initial.mean))
        return float(np.linalg.norm(self.samples, axis=1).mean())

    def analytic(self, rows):
        return self.is_gaussian and rows.l == 2 and rows.is_halfspace()

    def basin_moments(self, rows):
        """Mass and partial first moment E[x0 ; D_j] of every basin."""
        l = rows.l
        if l == 1:
            return np.ones(1), self.mean()[None, :]
        if self.analytic(rows):
            return gaussian_halfspace_moments(
                rows.lin[0, 1], rows.const[0, 1], self.initial.mean, self.initial.covariance
            )
        x = self.samples
        idx = rows.classify(x)
        w = 1.0 / x.shape[0]
        mass = np.bincount(idx, minlength=l) * w
        first = np.zeros((l, x.shape[1]))
        np.add.at(first, idx, x * w)
        return mass, first


def gaussian_halfspace_moments(a, c, mean, cov):
    """P and E[x ; .] for {a^T x + c <= 0} and its complement under N(mean, cov)."""
    s2 = float(a @ cov @ a)
    level = -c - float(a @ mean)
    if s2 <= 0.0:
        p1 = 1.0 if level >= 0.0 else 0.0
        m1 = p1 * mean
    else:
        s = math.sqrt(s2)
        z = level / s
        p1 = float(ndtr(z))
        dens = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        m1 = p1 * mean - (cov @ a) * dens / s
    mass = np.array([p1, 1.0 - p1])
    first = np.array([m1, mean - m1])
    return mass, first


# -- the operator G ----------------------------------------------------------

@dataclass
class GResult:
    path: SampledPath
    bundles: dict
    classifier: BasinClassifier
    masses: np.ndarray  # (atoms, l)
    weights: np.ndarray

    @property
    def fractions(self):
        return self.masses.T @ self.weights


class MeanFieldOperator:
    """G: candidate mean path -> population mean of the best responses to it.

    Gamma does not depend on xbar, so it is solved once per (atom, j) and
    reused across applications.
    """

    def __init__(self, scenario, grid=None, mode=None, measure=None):
        self.scenario = scenario
        self.grid = grid or scenario.grid
        self.mode = mode or scenario.mode
        self.L = scenario.coupling_matrix(self.mode)
        self.measure = measure or InitialMeasure(
            scenario.initial, scenario.solver.mc_samples, scenario.seed
        )
        self._gammas = {}

    def gamma(self, a, j):
        key = (a, j)
        if key not in self._gammas:
            self._gammas[key] = solve_gamma(self.scenario.atoms[a], j, self.scenario.q, self.grid)
        return self._gammas[key]

    def bundles(self, xbar):
        sc = self.scenario
        out = {}
        for a, atom in enumerate(sc.atoms):
            for j in range(sc.l):
                out[a, j] = make_bundle(
                    atom, j, sc.destinations[j], sc.q, self.L, xbar, self.grid, self.gamma(a, j)
                )
        return out

    def __call__(self, xbar):
        sc = self.scenario
        bundles = self.bundles(xbar)
        rows = []
        masses = np.zeros((len(sc.atoms), sc.l))
        total = np.zeros((self.grid.steps + 1, sc.n))
        for a, atom in enumerate(sc.atoms):
            r = compute_basins([bundles[a, j] for j in range(sc.l)])
            rows.append(r)
            mass, first = self.measure.basin_moments(r)
            masses[a] = mass
            for j in range(sc.l):
                Phi, resp = bundles[a, j].closed_loop_parts()
                total += atom.weight * (Phi @ first[j] + mass[j] * resp)
        return GResult(
            SampledPath(self.grid, total), bundles, BasinClassifier(rows), masses, sc.weights
        )


def apply_G(xbar, scenario, grid=None, mode=None, measure=None):
    """One application of G; returns the new mean path."""
    return MeanFieldOperator(scenario, grid, mode, measure)(xbar).path


def uncontrolled_mean(scenario, grid=None):
    """Initial mean propagated by the weight-averaged drift, with no control."""
    grid = grid or scenario.grid
    n = scenario.n
    Abar = sum(a.weight * a.A for a in scenario.atoms)
    C = np.ascontiguousarray(np.broadcast_to(Abar, (grid.steps + 1, n, n)))
    zeros = np.zeros((grid.steps + 1, n, 1))
    mu0 = np.asarray(scenario.initial.mean_vector(), dtype=float).reshape(n, 1)
    out, status = kernels.linear_forward(C, C[:-1].copy(), zeros, zeros[:-1], mu0, grid.dt)
    if status >= 0:
        raise IntegrationDivergedError(int(status), what="uncontrolled mean")
    return SampledPath(grid, out[:, :, 0])


def sup_distance(a, b):
    return float(np.linalg.norm(a.values - b.values, axis=1).max())


@dataclass
class MeanFieldSolution:
    scenario: object
    grid: object
    mode: str
    xbar: SampledPath
    bundles: dict
    classifier: BasinClassifier
    masses: np.ndarray
    residual: float
    iterations: int
    history: list = field(default_factory=list)
    measure: InitialMeasure = None
    L: np.ndarray = None

    @property
    def fractions(self):
        """Fraction of the infinite population heading to each destination."""
        return self.masses.T @ self.scenario.weights

    def classify(self, x0, atom=0):
        return self.classifier.classify(x0, atom)

    def bundle(self, atom, j):
        return self.bundles[atom, j]


def find_fixed_point(scenario, grid=None, tol=None, max_iter=None, damping=None,
                     mode=None, initial_guess=None, measure=None, adaptive=True):
    """Damped Picard iteration xbar <- (1 - a) xbar + a G(xbar).

    With q = 0 the map G ignores its argument, so a full step is taken and
    the iteration ends after one update. When ``adaptive`` is set the step a
    is halved (down to MIN_DAMPING) each time the residual fails to shrink,
    which breaks the two-cycles strong coupling can otherwise lock into. Raises :class:`ConvergenceError`
    carrying the residual history when ``max_iter`` updates do not reach ``tol``.
    """
    opts = scenario.solver
    tol = opts.tol if tol is None else tol
    max_iter = opts.max_iter if max_iter is None else max_iter
    alpha = opts.damping if damping is None else damping
    if scenario.q == 0.0:
        alpha = 1.0
    op = MeanFieldOperator(scenario, grid, mode, measure)
    xbar = initial_guess if initial_guess is not None else uncontrolled_mean(scenario, op.grid)
    history = []
    updates = 0
    while True:
        res = op(xbar)
        residual = sup_distance(res.path, xbar)
        history.append(residual)
        log.debug("picard update %d residual %.3e", updates, residual)
        if residual <= tol:
            return MeanFieldSolution(
                scenario, op.grid, op.mode, xbar, res.bundles, res.classifier, res.masses,
                residual, updates, history, op.measure, op.L,
            )
        if updates >= max_iter:
            raise ConvergenceError(
                f"no fixed point within {max_iter} updates (residual {residual:.3e} > {tol:.1e})",
                history,
            )
        if adaptive and len(history) > 1 and residual >= history[-2]:
            alpha = max(0.5 * alpha, MIN_DAMPING)
        xbar = SampledPath(op.grid, (1.0 - alpha) * xbar.values + alpha * res.path.values)
        updates += 1


# -- diagnostics ---------------------------------------------------------------

def _spectral_norms(mats):
    return np.linalg.norm(mats, ord=2, axis=(-2, -1))


def check_assumptions(scenario, grid=None, k3_points=101, measure=None):
    """Bounds k1, k2, k3 and the verdicts of the existence/optimality hypotheses.

    Maxima over the type set are maxima over the finite list of atoms; the
    triple maximum in k3 is taken on a subsampled grid of ``k3_points`` times.
    """
    grid = grid or scenario.grid
    measure = measure or InitialMeasure(scenario.initial, scenario.solver.mc_samples, scenario.seed)
    L = scenario.coupling_matrix(scenario.mode)
    q = scenario.q
    l = scenario.l
    from .riccati import solve_transition

    k1_sum = np.zeros(l)
    k2_sum = np.zeros(l)
    k3_sum = np.zeros(l)
    idx = np.unique(np.linspace(0, grid.steps, min(k3_points, grid.steps + 1)).round().astype(int))
    for atom in scenario.atoms:
        BBt = atom.B @ atom.B.T
        for j in range(l):
            gamma = solve_gamma(atom, j, q, grid)
            tr = solve_transition(atom, j, gamma, grid, q=q)
            inv = tr.inverse  # Phi(t,0)^{-1} = Phi(0,t)
            k1_sum[j] = max(k1_sum[j], _spectral_norms(inv).max())
            b = make_bundle(atom, j, scenario.destinations[j], q, L, None, grid, gamma)
            _, resp = b.closed_loop_parts()
            k2_sum[j] = max(k2_sum[j], np.linalg.norm(resp, axis=1).max())
            if q != 0.0:
                Phi = tr.phi.values[idx]
                Pinv = inv[idx]
                # Phi(s, t) = Phi(s,0) Phi(t,0)^{-1}; Psi(s,t,s,tau) L = Phi(s,t)^T B B^T Phi(s,tau) L
                best = 0.0
                for si in range(len(idx)):
                    Pst = Phi[si] @ Pinv  # (T, n, n) over t
                    left = np.swapaxes(Pst, -1, -2) @ BBt  # (T, n, n)
                    right = Pst @ L  # (T, n, n) over tau
                    prod = np.einsum("aij,bjk->abik", left, right)
                    best = max(best, _spectral_norms(prod).max())
                k3_sum[j] = max(k3_sum[j], q / atom.r * best)
    k1 = measure.expected_norm() * k1_sum.sum()
    k2 = k2_sum.sum()
    k3 = k3_sum.sum()
    lhs = math.sqrt(max(k1 + k2, k3)) * scenario.horizon
    sym_eigs = np.linalg.eigvalsh(0.5 * (L + L.T))
    second = float(np.trace(measure.second_moment()))
    return {
        "k1": float(k1),
        "k2": float(k2),
        "k3": float(k3),
        "assumption1_lhs": lhs,
        "assumption1_rhs": math.pi / 2,
        "assumption1_holds": bool(lhs < math.pi / 2),
        "L": L.tolist(),
        "L_eigenvalues": sym_eigs.tolist(),
        "assumption2_holds": bool(sym_eigs.min() >= 0.0),
        "second_moment": second,
        "assumption4_holds": bool(np.isfinite(second)),
        "mode": scenario.mode,
    }


# -- asymptotic cost --------------------------------------------------------------

def coupling_correction(solution):
    """Time integral turning E[branch cost] into the per-agent social cost.

    Cooperative mode: -1/2 int q xbar^T L xbar dt. In general
    int q (1/2 xbar^T Z^T Z xbar - xbar^T Z xbar - xbar^T L xbar) dt, which
    reduces to the cooperative expression when L = Z^T Z - Z - Z^T.
    """
    sc = solution.scenario
    x = solution.xbar.values
    q = sc.q
    if q == 0.0:
        return 0.0
    if solution.mode == COOPERATIVE:
        L = sc.coupling_matrix(COOPERATIVE)
        integrand = -0.5 * q * np.einsum("ki,ij,kj->k", x, L, x)
    else:
        Z = sc.Z
        L = solution.L
        integrand = q * (
            0.5 * np.einsum("ki,ij,kj->k", x, Z.T @ Z, x)
            - np.einsum("ki,ij,kj->k", x, Z, x)
            - np.einsum("ki,ij,kj->k", x, L, x)
        )
    return float(integrate_samples(integrand, solution.grid))


def expected_branch_cost(solution):
    """E over P0 x P_theta of the basin-selected branch cost at time 0."""
    sc = solution.scenario
    measure = solution.measure
    total = 0.0
    for a, atom in enumerate(sc.atoms):
        rows = solution.classifier.rows[a]
        bundles = [solution.bundles[a, j] for j in range(sc.l)]
        if sc.l == 1 or measure.analytic(rows):
            mass, first = measure.basin_moments(rows)
            G0 = bundles[0].gamma.values[0]
            val = 0.5 * float(np.trace(G0 @ measure.second_moment()))
            for j, b in enumerate(bundles):
                val += float(b.beta.values[0] @ first[j]) + float(b.delta.values[0]) * mass[j]
        else:
            x = measure.samples
            idx = rows.classify(x)
            from .riccati import branch_cost

            costs = np.array([branch_cost(b, x) for b in bundles])
            val = float(costs[idx, np.arange(x.shape[0])].mean())
        total += atom.weight * val
    return total


def asymptotic_social_cost(solution):
    """Limit of the optimal per-agent social cost, from the fixed point alone."""
    return coupling_correction(solution) + expected_branch_cost(solution)
