"""Time grids, sampled paths, and the generic RK4 / quadrature kernels.

The solver modules use the specialised sweeps in :mod:`mfchoice.kernels`;
the functions here accept arbitrary Python vector fields and are the
reference the specialised sweeps are tested against.
"""
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, IntegrationDivergedError, OutOfRangeError


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")

    @property
    def dt(self):
        return self.horizon / self.steps

    @property
    def times(self):
        t = np.arange(self.steps + 1) * self.dt
        t[-1] = self.horizon
        return t

    @property
    def midpoints(self):
        return (np.arange(self.steps) + 0.5) * self.dt

    @classmethod
    def default(cls, horizon):
        """Grid with dt = T/1000."""
        return cls(float(horizon), 1000)


@dataclass(frozen=True)
class SampledPath:
    """Vector- or matrix-valued function of time stored on every grid point."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape[0] != self.grid.steps + 1:
            raise GridMismatchError(
                f"path has {values.shape[0]} samples, grid needs {self.grid.steps + 1}"
            )
        if not np.all(np.isfinite(values)):
            bad = int(np.argmax(~np.isfinite(values.reshape(values.shape[0], -1)).any(axis=1)))
            raise IntegrationDivergedError(bad, what="path")
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return self.values.shape[1:]

    def __call__(self, t):
        return eval_path(self, t)

    def at_end(self):
        return self.values[-1]


def _check_same_grid(path, grid):
    if path.grid != grid:
        raise GridMismatchError(f"path grid {path.grid} differs from {grid}")


def _rk4_march(rhs, y0, times, where):
    values = np.empty((len(times),) + np.shape(y0))
    values[0] = y0
    for k in range(len(times) - 1):
        t, y = times[k], values[k]
        h = times[k + 1] - t
        k1 = np.asarray(rhs(t, y))
        k2 = np.asarray(rhs(t + 0.5 * h, y + 0.5 * h * k1))
        k3 = np.asarray(rhs(t + 0.5 * h, y + 0.5 * h * k2))
        k4 = np.asarray(rhs(t + h, y + h * k3))
        nxt = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(nxt)):
            raise IntegrationDivergedError(where(k + 1))
        values[k + 1] = nxt
    return values


def integrate_backward(rhs, terminal_value, grid):
    """Classical RK4 from t = T down to t = 0; ``rhs(t, y)`` is dy/dt."""
    yT = np.asarray(terminal_value, dtype=float)
    times = grid.times[::-1]
    K = grid.steps
    values = _rk4_march(rhs, yT, times, lambda i: K - i)[::-1]
    values[-1] = yT
    return SampledPath(grid, np.ascontiguousarray(values))


def integrate_forward(rhs, initial_value, grid):
    """Classical RK4 from t = 0 up to t = T."""
    y0 = np.asarray(initial_value, dtype=float)
    return SampledPath(grid, _rk4_march(rhs, y0, grid.times, lambda i: i))


def eval_path(path, t):
    """Linear interpolation; exact at grid points."""
    grid = path.grid
    if not (0.0 <= t <= grid.horizon):
        raise OutOfRangeError(f"t={t} outside [0, {grid.horizon}]")
    s = t / grid.dt
    nearest = round(s)
    if abs(s - nearest) <= 1e-9 * max(1.0, s):
        # grid point up to division roundoff
        return path.values[min(int(nearest), grid.steps)].copy()
    k = int(np.floor(s))
    lo = path.values[k]
    return lo + (s - k) * (path.values[k + 1] - lo)


def trapezoid_weights(grid):
    w = np.full(grid.steps + 1, grid.dt)
    w[0] = w[-1] = 0.5 * grid.dt
    return w


def quadrature(path):
    """Composite trapezoid rule of a scalar path over the whole grid."""
    v = np.asarray(path.values)
    if v.ndim != 1:
        raise ValueError(f"quadrature expects a scalar path, got shape {v.shape[1:]}")
    return float(trapezoid_weights(path.grid) @ v)


def integrate_samples(values, grid):
    """Trapezoid integral over time of an array whose leading axis is the grid."""
    return np.tensordot(trapezoid_weights(grid), values, axes=(0, 0))
