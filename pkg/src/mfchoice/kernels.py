"""Fixed-step RK4 sweeps for the Riccati, offset and linear transport equations.

These loops dominate runtime: thousands of steps on matrices of size n (or
N*n for the stacked centralized problem). They are compiled with numba unless
``MFCHOICE_DISABLE_NUMBA`` is set, in which case the identical code runs under
numpy. Every kernel returns a status integer alongside its output: -1 when all
values stayed finite, otherwise the first grid index holding a non-finite value.

Conventions: arrays indexed by grid point have a leading axis of length K+1;
midpoint arrays (values at t_k + dt/2) have leading length K.
"""
import numpy as np

from ._accel import jit_decorator


@jit_decorator
def _riccati_rate(G, A, At, S, Q):
    return G @ S @ G - G @ A - At @ G - Q


@jit_decorator
def riccati_backward(A, At, S, Q, terminal, dt, symmetrize, K):
    """March dG/dt = G S G - G A - A^T G - Q from G(T) = terminal down to t = 0."""
    n = terminal.shape[0]
    out = np.empty((K + 1, n, n))
    out[K] = terminal
    h = -dt
    for k in range(K, 0, -1):
        g = out[k]
        k1 = _riccati_rate(g, A, At, S, Q)
        k2 = _riccati_rate(g + 0.5 * h * k1, A, At, S, Q)
        k3 = _riccati_rate(g + 0.5 * h * k2, A, At, S, Q)
        k4 = _riccati_rate(g + h * k3, A, At, S, Q)
        nxt = g + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if symmetrize:
            nxt = 0.5 * (nxt + nxt.T)
        if not np.all(np.isfinite(nxt)):
            return out, k - 1
        out[k - 1] = nxt
    return out, -1


@jit_decorator
def offset_backward(gamma, gamma_mid, At, S, forcing, forcing_mid, beta_T, delta_T, dt):
    """Joint backward sweep of

        d beta/dt  = (G S - A^T) beta - f(t)
        d delta/dt = 0.5 beta^T S beta

    with G and f supplied on the grid and at midpoints.
    """
    K = gamma.shape[0] - 1
    n = beta_T.shape[0]
    beta = np.empty((K + 1, n))
    delta = np.empty(K + 1)
    beta[K] = beta_T
    delta[K] = delta_T
    h = -dt
    for k in range(K, 0, -1):
        b = beta[k]
        P_hi = gamma[k] @ S - At
        P_md = gamma_mid[k - 1] @ S - At
        P_lo = gamma[k - 1] @ S - At
        f_hi = forcing[k]
        f_md = forcing_mid[k - 1]
        f_lo = forcing[k - 1]

        kb1 = P_hi @ b - f_hi
        kd1 = 0.5 * (b @ (S @ b))
        b2 = b + 0.5 * h * kb1
        kb2 = P_md @ b2 - f_md
        kd2 = 0.5 * (b2 @ (S @ b2))
        b3 = b + 0.5 * h * kb2
        kb3 = P_md @ b3 - f_md
        kd3 = 0.5 * (b3 @ (S @ b3))
        b4 = b + h * kb3
        kb4 = P_lo @ b4 - f_lo
        kd4 = 0.5 * (b4 @ (S @ b4))

        nb = b + (h / 6.0) * (kb1 + 2.0 * kb2 + 2.0 * kb3 + kb4)
        nd = delta[k] + (h / 6.0) * (kd1 + 2.0 * kd2 + 2.0 * kd3 + kd4)
        if not (np.all(np.isfinite(nb)) and np.isfinite(nd)):
            return beta, delta, k - 1
        beta[k - 1] = nb
        delta[k - 1] = nd
    return beta, delta, -1


@jit_decorator
def linear_forward(C, C_mid, F, F_mid, X0, dt):
    """March dX/dt = C(t) X + F(t) from X(0) = X0, X of shape (n, p)."""
    K = C.shape[0] - 1
    n, p = X0.shape
    out = np.empty((K + 1, n, p))
    out[0] = X0
    h = dt
    for k in range(K):
        x = out[k]
        k1 = C[k] @ x + F[k]
        k2 = C_mid[k] @ (x + 0.5 * h * k1) + F_mid[k]
        k3 = C_mid[k] @ (x + 0.5 * h * k2) + F_mid[k]
        k4 = C[k + 1] @ (x + h * k3) + F[k + 1]
        nxt = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(nxt)):
            return out, k + 1
        out[k + 1] = nxt
    return out, -1


@jit_decorator
def linear_backward(C, C_mid, F, F_mid, XT, dt):
    """March dX/dt = C(t) X + F(t) from X(T) = XT down to t = 0."""
    K = C.shape[0] - 1
    n, p = XT.shape
    out = np.empty((K + 1, n, p))
    out[K] = XT
    h = -dt
    for k in range(K, 0, -1):
        x = out[k]
        k1 = C[k] @ x + F[k]
        k2 = C_mid[k - 1] @ (x + 0.5 * h * k1) + F_mid[k - 1]
        k3 = C_mid[k - 1] @ (x + 0.5 * h * k2) + F_mid[k - 1]
        k4 = C[k - 1] @ (x + h * k3) + F[k - 1]
        nxt = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(nxt)):
            return out, k - 1
        out[k - 1] = nxt
    return out, -1


def hermite_midpoints(values, rates, dt):
    """Cubic Hermite estimate at t_k + dt/2 from values and time derivatives on the grid.

    Keeps the fourth-order accuracy of RK4 when one sweep consumes another's output.
    """
    return 0.5 * (values[:-1] + values[1:]) + (dt / 8.0) * (rates[:-1] - rates[1:])


def linear_midpoints(values):
    return 0.5 * (values[:-1] + values[1:])
