"""Generic agent's LQ tracking problem for one (type atom, destination) branch.

For destination j the value function is V(x, t) = 1/2 x^T G(t) x + b(t)^T x + c(t)
with

    dG/dt = G S G - G A - A^T G - q I,      G(T) = M_j I
    db/dt = (G S - A^T) b - q L^T xbar,    b(T) = -M_j p_j
    dc/dt = 1/2 b^T S b,                   c(T) = M_j/2 |p_j|^2

where S = B B^T / r. The branch control is u = -(1/r) B^T (G x + b).
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import GridMismatchError, IntegrationDivergedError, RiccatiDivergedError
from .numerics import SampledPath, eval_path, integrate_samples


def _gamma_rates(values, atom, q):
    A, S = atom.A, atom.S
    return values @ S @ values - values @ A - A.T @ values - q * np.eye(atom.n)


def gamma_midpoints(gamma, atom, q):
    rates = _gamma_rates(gamma.values, atom, q)
    return kernels.hermite_midpoints(gamma.values, rates, gamma.grid.dt)


def solve_gamma(atom, j, q, grid):
    """Backward RK4 solution of the matrix Riccati equation for terminal weight M_j."""
    n = atom.n
    terminal = atom.M[j] * np.eye(n)
    values, status = kernels.riccati_backward(
        atom.A,
        np.ascontiguousarray(atom.A.T),
        atom.S,
        q * np.eye(n),
        terminal,
        grid.dt,
        True,
        grid.steps,
    )
    if status >= 0:
        raise RiccatiDivergedError(int(status))
    values[-1] = terminal
    return SampledPath(grid, values)


def _forcing(q, L, xbar, grid, n):
    if xbar is None or q == 0.0:
        return np.zeros((grid.steps + 1, n)), np.zeros((grid.steps, n))
    if xbar.grid != grid:
        raise GridMismatchError(f"xbar grid {xbar.grid} differs from {grid}")
    f = q * xbar.values @ L  # rows of (q L^T xbar(t))^T
    return np.ascontiguousarray(f), kernels.linear_midpoints(f)


def solve_offset(atom, j, destination, gamma, xbar, q, L, grid):
    """Backward sweep of the offset vector and scalar against the mean path ``xbar``.

    Returns ``(beta, delta)`` as sampled paths. ``xbar=None`` means xbar = 0.
    """
    if gamma.grid != grid:
        raise GridMismatchError(f"gamma grid {gamma.grid} differs from {grid}")
    n = atom.n
    p = np.asarray(destination, dtype=float)
    Mj = atom.M[j]
    f, f_mid = _forcing(q, L, xbar, grid, n)
    beta, delta, status = kernels.offset_backward(
        gamma.values,
        gamma_midpoints(gamma, atom, q),
        np.ascontiguousarray(atom.A.T),
        atom.S,
        f,
        f_mid,
        -Mj * p,
        0.5 * Mj * float(p @ p),
        grid.dt,
    )
    if status >= 0:
        raise IntegrationDivergedError(int(status), what="offset equation")
    return SampledPath(grid, beta), SampledPath(grid, delta)


@dataclass
class TransitionPath:
    """Phi(t, 0) for dPhi/dt = Pi(t) Phi with Pi = G S - A^T.

    Phi(t, eta) is rebuilt as Phi(t, 0) Phi(eta, 0)^{-1}.
    """

    phi: SampledPath
    _inverse: np.ndarray = field(default=None, repr=False)

    @property
    def inverse(self):
        if self._inverse is None:
            self._inverse = np.linalg.inv(self.phi.values)
        return self._inverse

    def between(self, t_index, eta_index):
        return self.phi.values[t_index] @ self.inverse[eta_index]

    def condition_numbers(self):
        return np.linalg.cond(self.phi.values)


def _pi_path(atom, gamma, q):
    At = atom.A.T
    S = atom.S
    mid = gamma_midpoints(gamma, atom, q)
    return gamma.values @ S - At, mid @ S - At


def solve_transition(atom, j, gamma, grid, q=None):
    """Forward sweep for Phi(t, 0). ``q`` is only needed for the Hermite midpoints of gamma."""
    if gamma.grid != grid:
        raise GridMismatchError(f"gamma grid {gamma.grid} differs from {grid}")
    if q is None:
        raise TypeError("solve_transition needs the coupling weight q of the gamma sweep")
    n = atom.n
    C, C_mid = _pi_path(atom, gamma, q)
    zeros = np.zeros((grid.steps + 1, n, n))
    values, status = kernels.linear_forward(
        np.ascontiguousarray(C), np.ascontiguousarray(C_mid), zeros, zeros[:-1], np.eye(n), grid.dt
    )
    if status >= 0:
        raise IntegrationDivergedError(int(status), what="transition matrix")
    return TransitionPath(SampledPath(grid, values))


@dataclass
class RiccatiBundle:
    """Gamma, beta, delta for one (atom, destination) pair against a fixed mean path."""

    atom: object
    j: int
    destination: np.ndarray
    q: float
    L: np.ndarray
    gamma: SampledPath
    beta: SampledPath
    delta: SampledPath
    xbar: SampledPath = None
    _closed_loop: tuple = field(default=None, repr=False)

    @property
    def grid(self):
        return self.gamma.grid

    def value_at_start(self):
        return self.gamma.values[0], self.beta.values[0], float(self.delta.values[0])

    def beta_midpoints(self):
        S = self.atom.S
        b = self.beta.values
        rates = np.einsum("kij,kj->ki", self.gamma.values @ S - self.atom.A.T, b)
        f, _ = _forcing(self.q, self.L, self.xbar, self.grid, self.atom.n)
        return kernels.hermite_midpoints(b, rates - f, self.grid.dt)

    def closed_loop_parts(self):
        """(Phi_cl, resp) with closed-loop state x(t) = Phi_cl(t) x0 + resp(t).

        Phi_cl solves dX/dt = (A - S G) X from the identity; resp solves the
        same equation forced by -S beta from zero. Both come out of one sweep.
        """
        if self._closed_loop is None:
            atom, grid = self.atom, self.grid
            n = atom.n
            S = atom.S
            g_mid = gamma_midpoints(self.gamma, atom, self.q)
            C = np.ascontiguousarray(atom.A - S @ self.gamma.values)
            C_mid = np.ascontiguousarray(atom.A - S @ g_mid)
            F = np.zeros((grid.steps + 1, n, n + 1))
            F_mid = np.zeros((grid.steps, n, n + 1))
            F[:, :, n] = -(self.beta.values @ S.T)
            F_mid[:, :, n] = -(self.beta_midpoints() @ S.T)
            X0 = np.concatenate([np.eye(n), np.zeros((n, 1))], axis=1)
            out, status = kernels.linear_forward(C, C_mid, F, F_mid, X0, grid.dt)
            if status >= 0:
                raise IntegrationDivergedError(int(status), what="closed loop")
            self._closed_loop = (np.ascontiguousarray(out[:, :, :n]), np.ascontiguousarray(out[:, :, n]))
        return self._closed_loop


def make_bundle(atom, j, destination, q, L, xbar, grid, gamma=None):
    """Solve gamma (unless given), beta and delta for branch j against ``xbar``."""
    if gamma is None:
        gamma = solve_gamma(atom, j, q, grid)
    beta, delta = solve_offset(atom, j, destination, gamma, xbar, q, L, grid)
    return RiccatiBundle(atom, j, np.asarray(destination, dtype=float), q, L, gamma, beta, delta, xbar)


def feedback_control(bundle, x, t):
    """u = -(1/r) B^T (G(t) x + b(t))."""
    atom = bundle.atom
    G = eval_path(bundle.gamma, t)
    b = eval_path(bundle.beta, t)
    return -(atom.B.T @ (G @ np.asarray(x, dtype=float) + b)) / atom.r


def branch_cost(bundle, x0):
    """1/2 x0^T G(0) x0 + b(0)^T x0 + c(0); ``x0`` may be a stack of rows."""
    G0, b0, c0 = bundle.value_at_start()
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        return float(0.5 * x0 @ G0 @ x0 + b0 @ x0 + c0)
    return 0.5 * np.einsum("ki,ij,kj->k", x0, G0, x0) + x0 @ b0 + c0


def closed_loop_trajectory(bundle, x0, grid=None):
    """State path under the branch feedback law starting from ``x0``."""
    Phi, resp = bundle.closed_loop_parts()
    if grid is not None and grid != bundle.grid:
        raise GridMismatchError(f"grid {grid} differs from bundle grid {bundle.grid}")
    x0 = np.asarray(x0, dtype=float)
    return SampledPath(bundle.grid, Phi @ x0 + resp)


def closed_loop_controls(bundle, states):
    """Controls on the grid for a state path (or stack of paths, shape (K+1, n, p))."""
    atom = bundle.atom
    G, b = bundle.gamma.values, bundle.beta.values
    if states.ndim == 2:
        return -((np.einsum("kij,kj->ki", G, states) + b) @ atom.B) / atom.r
    return -np.einsum("ji,kjp->kip", atom.B, G @ states + b[:, :, None]) / atom.r


def generic_cost(atom, q, L, destinations, xbar, states, controls, grid, branch=None):
    """Quadrature of the generic agent's cost

        int q/2 |x|^2 + q xbar^T L x + r/2 |u|^2 dt + terminal,

    where the terminal term is the branch's penalty when ``branch`` is given
    and the minimum over destinations otherwise.
    """
    x = states.values if isinstance(states, SampledPath) else np.asarray(states)
    u = controls.values if isinstance(controls, SampledPath) else np.asarray(controls)
    run = 0.5 * q * np.sum(x * x, axis=1) + 0.5 * atom.r * np.sum(u * u, axis=1)
    if xbar is not None and q != 0.0:
        run = run + q * np.einsum("ki,ij,kj->k", xbar.values, L, x)
    dest = np.asarray(destinations, dtype=float)
    term = 0.5 * atom.M * np.sum((x[-1] - dest) ** 2, axis=1)
    final = term[branch] if branch is not None else term.min()
    return float(integrate_samples(run, grid) + final)


def explicit_trajectory(bundle, x0, transition, xbar=None):
    """Closed-form trajectory through transition matrices, by trapezoid quadrature.

        x(t) = Phi(0,t)^T x0 + (M/r) int_0^t Psi(s,t,s,T) p ds
               + (q/r) int_0^t int_T^s Psi(s,t,s,tau) L^T xbar(tau) dtau ds

    with Psi(a,b,c,d) = Phi(a,b)^T B B^T Phi(c,d). Used to cross-check
    :func:`closed_loop_trajectory`.
    """
    atom = bundle.atom
    grid = bundle.grid
    dt = grid.dt
    K = grid.steps
    Phi = transition.phi.values
    Phi_inv = transition.inverse
    BBt = atom.B @ atom.B.T
    Mj = atom.M[bundle.j]
    p = bundle.destination

    # inner(s) = (M/r) Phi(s,T) p + (q/r) int_T^s Phi(s,tau) L^T xbar(tau) dtau
    inner = (Mj / atom.r) * (Phi @ (Phi_inv[K] @ p))
    if xbar is not None and bundle.q != 0.0:
        g = np.einsum("kij,kj->ki", Phi_inv, xbar.values @ bundle.L)
        # cumulative trapezoid of g from s to T
        seg = 0.5 * dt * (g[:-1] + g[1:])
        tail = np.zeros_like(g)
        tail[:-1] = np.cumsum(seg[::-1], axis=0)[::-1]
        inner = inner - (bundle.q / atom.r) * np.einsum("kij,kj->ki", Phi, tail)
    h = np.einsum("kji,jl,kl->ki", Phi, BBt, inner)  # Phi(s,0)^T B B^T inner(s)
    acc = np.zeros_like(h)
    acc[1:] = np.cumsum(0.5 * dt * (h[:-1] + h[1:]), axis=0)
    total = x0[None, :] + acc
    return SampledPath(grid, np.einsum("kji,kj->ki", Phi_inv, total))
