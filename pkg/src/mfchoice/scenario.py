"""Problem data: agent type atoms, initial-state distributions, and the scenario file format."""
import json
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ScenarioError
from .numerics import TimeGrid

COOPERATIVE = "cooperative"
NONCOOPERATIVE = "noncooperative"
MODES = (COOPERATIVE, NONCOOPERATIVE)


def _matrix(value, rows, cols, name):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(name, f"not numeric ({exc})") from None
    if arr.size != rows * cols:
        raise ScenarioError(name, f"expected {rows}x{cols} entries, got {arr.size}")
    arr = arr.reshape(rows, cols)
    if not np.all(np.isfinite(arr)):
        raise ScenarioError(name, "contains non-finite entries")
    return arr


def _vector(value, size, name):
    return _matrix(value, 1, size, name).reshape(size)


@dataclass(frozen=True, eq=False)
class AgentTypeAtom:
    """One type theta = (A, B, r, M_1..M_l) carrying probability ``weight``."""

    A: np.ndarray
    B: np.ndarray
    r: float
    M: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim < 2:
            B = B.reshape(A.shape[0], -1)
        M = np.atleast_1d(np.asarray(self.M, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "weight", float(self.weight))
        if A.shape[0] != A.shape[1]:
            raise ScenarioError("A", f"must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ScenarioError("B", f"needs {A.shape[0]} rows, got {B.shape[0]}")
        if not self.r > 0:
            raise ScenarioError("r", f"must be positive, got {self.r}")
        if not np.all(M > 0):
            raise ScenarioError("M", "terminal weights must be positive")
        if not 0.0 <= self.weight <= 1.0:
            raise ScenarioError("weight", f"must lie in [0, 1], got {self.weight}")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def S(self):
        """B B^T / r."""
        return self.B @ self.B.T / self.r

    def with_(self, **changes):
        return replace(self, **changes)

    def __eq__(self, other):
        if not isinstance(other, AgentTypeAtom):
            return NotImplemented
        return (
            np.array_equal(self.A, other.A)
            and np.array_equal(self.B, other.B)
            and self.r == other.r
            and np.array_equal(self.M, other.M)
            and self.weight == other.weight
        )

    def __hash__(self):
        return hash((self.A.tobytes(), self.B.tobytes(), self.r, self.M.tobytes(), self.weight))


@dataclass(frozen=True, eq=False)
class GaussianInitial:
    mean: np.ndarray
    covariance: np.ndarray
    kind = "gaussian"

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        if cov.shape != (mean.size, mean.size):
            raise ScenarioError("initial.covariance", f"expected {mean.size}x{mean.size}, got {cov.shape}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ScenarioError("initial.covariance", "must be symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-10 * max(1.0, np.abs(cov).max()):
            raise ScenarioError("initial.covariance", "must be positive semidefinite")

    def sample(self, rng, size):
        return rng.multivariate_normal(self.mean, self.covariance, size=size, method="eigh")

    def mean_vector(self):
        return self.mean.copy()

    def second_moment(self):
        return self.covariance + np.outer(self.mean, self.mean)

    def __eq__(self, other):
        return (
            isinstance(other, GaussianInitial)
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.covariance, other.covariance)
        )

    def to_dict(self):
        return {"kind": self.kind, "mean": self.mean.tolist(), "covariance": self.covariance.ravel().tolist()}


@dataclass(frozen=True, eq=False)
class PointsInitial:
    """Explicit empirical distribution: uniform mass on each listed point."""

    points: np.ndarray
    kind = "points"

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] == 0:
            raise ScenarioError("initial.points", "needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ScenarioError("initial.points", "contains non-finite entries")
        object.__setattr__(self, "points", pts)

    def sample(self, rng, size):
        idx = rng.integers(0, self.points.shape[0], size=size)
        return self.points[idx].copy()

    def mean_vector(self):
        return self.points.mean(axis=0)

    def second_moment(self):
        return self.points.T @ self.points / self.points.shape[0]

    def __eq__(self, other):
        return isinstance(other, PointsInitial) and np.array_equal(self.points, other.points)

    def to_dict(self):
        return {"kind": self.kind, "points": self.points.tolist()}


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-6
    max_iter: int = 500
    damping: float = 0.5
    mc_samples: int = 10_000
    enumeration_cap: int = 4096

    def __post_init__(self):
        if not self.tol > 0:
            raise ScenarioError("solver.tol", "must be positive")
        if self.max_iter < 1:
            raise ScenarioError("solver.max_iter", "must be at least 1")
        if not 0.0 < self.damping <= 1.0:
            raise ScenarioError("solver.damping", "must lie in (0, 1]")
        if self.mc_samples < 1:
            raise ScenarioError("solver.mc_samples", "must be at least 1")
        if self.enumeration_cap < 1:
            raise ScenarioError("solver.enumeration_cap", "must be at least 1")


@dataclass(frozen=True, eq=False)
class Scenario:
    horizon: float
    q: float
    Z: np.ndarray
    destinations: np.ndarray
    atoms: tuple
    initial: object
    steps: int = 1000
    mode: str = COOPERATIVE
    solver: SolverOptions = field(default_factory=SolverOptions)
    seed: int = 0

    def __post_init__(self):
        dest = np.atleast_2d(np.asarray(self.destinations, dtype=float))
        object.__setattr__(self, "destinations", dest)
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "Z", np.atleast_2d(np.asarray(self.Z, dtype=float)))
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "q", float(self.q))
        self.validate()

    # -- shape ---------------------------------------------------------
    @property
    def n(self):
        return self.destinations.shape[1]

    @property
    def m(self):
        return self.atoms[0].m

    @property
    def l(self):
        return self.destinations.shape[0]

    @property
    def grid(self):
        return TimeGrid(self.horizon, self.steps)

    @property
    def weights(self):
        return np.array([a.weight for a in self.atoms])

    def coupling_matrix(self, mode=None):
        """Matrix L of the bilinear term q * xbar^T L x in the generic agent's running cost.

        Cooperative: L = Z^T Z - Z - Z^T. Noncooperative: -Z^T (the expansion
        of q/2 |x - Z xbar|^2 with the xbar-only constant dropped).
        """
        mode = mode or self.mode
        Z = self.Z
        if mode == COOPERATIVE:
            return Z.T @ Z - Z - Z.T
        if mode == NONCOOPERATIVE:
            return -Z.T
        raise ScenarioError("mode", f"unknown mode {mode!r}")

    def is_uniform(self):
        return len(self.atoms) == 1

    def with_(self, **changes):
        return replace(self, **changes)

    def validate(self):
        n, l = self.n, self.l
        if l < 1:
            raise ScenarioError("destinations", "need at least one destination")
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise ScenarioError("horizon", "must be positive and finite")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ScenarioError("steps", "must be a positive integer")
        if not (self.q >= 0 and np.isfinite(self.q)):
            raise ScenarioError("q", "must be nonnegative")
        if self.Z.shape != (n, n):
            raise ScenarioError("Z", f"expected {n}x{n}, got {self.Z.shape}")
        if self.mode not in MODES:
            raise ScenarioError("mode", f"must be one of {MODES}, got {self.mode!r}")
        if not np.all(np.isfinite(self.destinations)):
            raise ScenarioError("destinations", "contains non-finite entries")
        if len({tuple(p) for p in self.destinations}) != l:
            raise ScenarioError("destinations", "must be distinct")
        if not self.atoms:
            raise ScenarioError("atoms", "need at least one type atom")
        m = self.atoms[0].m
        for i, atom in enumerate(self.atoms):
            if atom.n != n:
                raise ScenarioError(f"atoms[{i}].A", f"expected {n}x{n}, got {atom.A.shape}")
            if atom.m != m:
                raise ScenarioError(f"atoms[{i}].B", f"expected {n}x{m}, got {atom.B.shape}")
            if atom.M.size != l:
                raise ScenarioError(f"atoms[{i}].M", f"expected {l} terminal weights, got {atom.M.size}")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ScenarioError("atoms", f"weights sum to {self.weights.sum()!r}, not 1")
        dim = self.initial.mean_vector().size
        if dim != n:
            raise ScenarioError("initial", f"distribution lives in R^{dim}, state space is R^{n}")

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return to_dict(self) == to_dict(other)


# -- serialization --------------------------------------------------------

def to_dict(sc):
    return {
        "n": sc.n,
        "m": sc.m,
        "l": sc.l,
        "horizon": sc.horizon,
        "steps": int(sc.steps),
        "q": sc.q,
        "Z": sc.Z.ravel().tolist(),
        "destinations": sc.destinations.tolist(),
        "mode": sc.mode,
        "atoms": [
            {
                "A": a.A.ravel().tolist(),
                "B": a.B.ravel().tolist(),
                "r": a.r,
                "M": a.M.tolist(),
                "weight": a.weight,
            }
            for a in sc.atoms
        ],
        "initial": sc.initial.to_dict(),
        "solver": {
            "tol": sc.solver.tol,
            "max_iter": sc.solver.max_iter,
            "damping": sc.solver.damping,
            "mc_samples": sc.solver.mc_samples,
            "enumeration_cap": sc.solver.enumeration_cap,
        },
        "seed": int(sc.seed),
    }


def _require(d, key, where=""):
    if key not in d:
        raise ScenarioError(where + key, "missing")
    return d[key]


def from_dict(d):
    """Build and validate a :class:`Scenario` from its JSON object."""
    if not isinstance(d, dict):
        raise ScenarioError("<root>", "scenario must be a JSON object")
    try:
        n = int(_require(d, "n"))
        m = int(_require(d, "m"))
        l = int(_require(d, "l"))
    except (TypeError, ValueError) as exc:
        raise ScenarioError("n/m/l", str(exc)) from None
    if min(n, m, l) < 1:
        raise ScenarioError("n/m/l", "dimensions must be positive")
    dest = _matrix(_require(d, "destinations"), l, n, "destinations")
    Z = _matrix(_require(d, "Z"), n, n, "Z")
    atoms = []
    for i, a in enumerate(_require(d, "atoms")):
        where = f"atoms[{i}]."
        atoms.append(
            AgentTypeAtom(
                A=_matrix(_require(a, "A", where), n, n, where + "A"),
                B=_matrix(_require(a, "B", where), n, m, where + "B"),
                r=float(_require(a, "r", where)),
                M=_vector(_require(a, "M", where), l, where + "M"),
                weight=float(a.get("weight", 1.0)),
            )
        )
    init = _require(d, "initial")
    kind = init.get("kind") if isinstance(init, dict) else None
    if kind == "gaussian":
        initial = GaussianInitial(
            _vector(_require(init, "mean", "initial."), n, "initial.mean"),
            _matrix(_require(init, "covariance", "initial."), n, n, "initial.covariance"),
        )
    elif kind == "points":
        pts = np.asarray(_require(init, "points", "initial."), dtype=float)
        initial = PointsInitial(_matrix(pts, pts.size // n if pts.size else 0, n, "initial.points"))
    else:
        raise ScenarioError("initial.kind", f"must be 'gaussian' or 'points', got {kind!r}")
    solver_d = d.get("solver", {})
    unknown = sorted(set(solver_d) - {f.name for f in fields(SolverOptions)})
    if unknown:
        raise ScenarioError("solver." + unknown[0], "unknown solver option")
    solver = SolverOptions(**solver_d)
    return Scenario(
        horizon=float(_require(d, "horizon")),
        steps=int(d.get("steps", 1000)),
        q=float(_require(d, "q")),
        Z=Z,
        destinations=dest,
        mode=d.get("mode", COOPERATIVE),
        atoms=tuple(atoms),
        initial=initial,
        solver=solver,
        seed=int(d.get("seed", 0)),
    )


def load(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ScenarioError("<file>", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError("<file>", f"invalid JSON: {exc}") from None
    return from_dict(data)


def dumps(sc):
    return json.dumps(to_dict(sc), indent=2, sort_keys=True)


def save(sc, path):
    with open(path, "w") as fh:
        fh.write(dumps(sc) + "\n")


def swarm_scenario(q=0.0, mode=COOPERATIVE, steps=2000, **solver):
    """Two-destination swarm example in R^2 used throughout the experiments."""
    atom = AgentTypeAtom(
        A=[[0.0, 1.0], [0.02, -0.3]],
        B=[[0.0], [0.3]],
        r=10.0,
        M=[1200.0, 1200.0],
    )
    return Scenario(
        horizon=2.0,
        steps=steps,
        q=q,
        Z=3.5 * np.eye(2),
        destinations=[[-10.0, 0.0], [10.0, 0.0]],
        mode=mode,
        atoms=(atom,),
        initial=GaussianInitial([-5.0, 10.0], 15.0 * np.eye(2)),
        solver=SolverOptions(**solver),
    )
