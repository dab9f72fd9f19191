"""Multi-destination collective choice for linear-quadratic agent populations.

Finite populations are solved exactly by enumerating destination
assignments; large populations through the mean-field fixed point and the
decentralized feedback strategies it induces.
"""
from ._accel import backend
from .centralized import assemble, exact_social_optimum, reachability_probe, solve_assignment
from .errors import (
    ConvergenceError,
    EnumerationCapError,
    IntegrationDivergedError,
    MFChoiceError,
    RiccatiDivergedError,
    ScenarioError,
    UncontrollableError,
)
from .meanfield import apply_G, asymptotic_social_cost, check_assumptions, find_fixed_point
from .numerics import SampledPath, TimeGrid
from .population import (
    convergence_experiment,
    mean_path_residual,
    sample_population,
    simulate_decentralized,
    social_cost,
)
from .riccati import branch_cost, make_bundle, solve_gamma, solve_offset, solve_transition
from .scenario import (
    COOPERATIVE,
    NONCOOPERATIVE,
    AgentTypeAtom,
    GaussianInitial,
    PointsInitial,
    Scenario,
    SolverOptions,
    swarm_scenario,
)
from .uniform import fraction_map, solve_lambda_bisection, solve_path_basis

__version__ = "0.1.0"
