import numpy as np
import pytest

from mfchoice.centralized import exact_social_optimum
from mfchoice.errors import ConvergenceError
from mfchoice.meanfield import find_fixed_point
from mfchoice.population import (
    MEAN_FIELD,
    PopulationSample,
    convergence_experiment,
    mean_path_residual,
    sample_population,
    simulate_decentralized,
    social_cost,
    trajectory_costs,
)
from mfchoice.riccati import branch_cost
from mfchoice.scenario import AgentTypeAtom, GaussianInitial, PointsInitial, swarm_scenario

from conftest import scalar_scenario, symmetric_scenario


def test_point_mass_sample():
    sc = scalar_scenario(initial=GaussianInitial([0.7], [[0.0]]))
    assert np.all(sample_population(sc, 25, 3).x0 == 0.7)
    sc = scalar_scenario(initial=PointsInitial([[0.4]]))
    assert np.all(sample_population(sc, 25, 3).x0 == 0.4)


def test_swarm_sample_mean():
    s = sample_population(swarm_scenario(), 400, 11)
    assert np.all(np.abs(s.x0.mean(axis=0) - [-5.0, 10.0]) <= 3 * np.sqrt(15 / 400))


def test_atom_weights_sampling():
    base = scalar_scenario()
    a1 = base.atoms[0].with_(weight=0.3)
    a2 = base.atoms[0].with_(weight=0.7, r=2.0)
    sc = base.with_(atoms=(a1, a2))
    hits = sum(int(np.sum(sample_population(sc, 10_000, seed).atom_index == 0)) for seed in range(10))
    assert abs(hits - 30_000) <= 3 * np.sqrt(100_000 * 0.21)


def test_sampling_deterministic():
    sc = swarm_scenario()
    a, b = sample_population(sc, 50, 4), sample_population(sc, 50, 4)
    assert np.array_equal(a.x0, b.x0) and np.array_equal(a.atom_index, b.atom_index)
    with pytest.raises(ValueError):
        sample_population(sc, 0, 1)


def test_single_agent_q0_cost_is_branch_cost():
    sc = scalar_scenario(q=0.0, Z=0.0, M=10.0, steps=1000)
    mf = find_fixed_point(sc)
    sample = PopulationSample.from_states([[0.35]])
    run = simulate_decentralized(sample, mf)
    best = min(branch_cost(mf.bundle(0, j), np.array([0.35])) for j in range(2))
    assert run.J_soc == pytest.approx(best, rel=1e-6)


def test_mirrored_sample_symmetry():
    sc = symmetric_scenario(q=1.0)
    mf = find_fixed_point(sc)
    x = np.array([[-0.7], [-0.2], [-0.05]])
    run = simulate_decentralized(PopulationSample.from_states(np.vstack([x, -x])), mf)
    assert run.fractions.tolist() == [0.5, 0.5]
    assert np.max(np.abs(run.mean_path.values)) <= 1e-9


def test_swarm_split_q0(swarm_q0):
    sc, mf = swarm_q0
    run = simulate_decentralized(sample_population(sc, 400, 0), mf)
    assert abs(run.fractions[1] - 0.82) <= 0.04


def test_realized_mean_is_average_and_costs_add_up(swarm_q40_coop):
    sc, mf = swarm_q40_coop
    run = simulate_decentralized(sample_population(sc, 300, 2), mf, store_paths=True)
    assert np.max(np.abs(run.states.mean(axis=1) - run.mean_path.values)) < 1e-10
    assert run.J_soc == float(np.sum(run.costs))
    J, per = social_cost(run, sc)
    assert np.max(np.abs(per - run.costs) / np.abs(run.costs)) < 1e-10
    assert J == pytest.approx(run.J_soc, rel=1e-10)


def test_group_costs_match_path_quadrature_mean_field_coupling(swarm_q40_coop):
    sc, mf = swarm_q40_coop
    run = simulate_decentralized(sample_population(sc, 50, 5), mf, coupling=MEAN_FIELD, store_paths=True)
    per = trajectory_costs(run.states, run.controls, run.sample.atom_index, sc, mf.grid, mf.xbar.values)
    assert np.allclose(per, run.costs, rtol=1e-10)


def test_rest_at_destinations_zero_cost():
    sc = scalar_scenario(q=0.0, Z=0.0, steps=200)
    K = sc.steps
    states = np.zeros((K + 1, 2, 1))
    states[:, 0, 0], states[:, 1, 0] = -1.0, 1.0
    costs = trajectory_costs(states, np.zeros((K + 1, 2, 1)), [0, 0], sc, sc.grid)
    assert np.all(costs == 0.0)


def test_social_cost_reproduces_centralized_optimum():
    sc = scalar_scenario(q=1.0, Z=0.0, M=10.0, steps=1000)
    agents = [(sc.atoms[0], np.array([-0.5])), (sc.atoms[0], np.array([0.5]))]
    sol = exact_social_optimum(sc, agents)
    J = trajectory_costs(sol.states.values, sol.controls.values, [0, 0], sc, sc.grid).sum()
    assert J == pytest.approx(sol.cost, rel=1e-3)


def test_mean_path_residual_points_exact():
    pts = np.array([[-0.9], [0.8], [0.95]])
    sc = scalar_scenario(q=1.0, initial=PointsInitial(pts), steps=300)
    mf = find_fixed_point(sc, tol=1e-12)
    run = simulate_decentralized(PopulationSample.from_states(pts), mf)
    assert mean_path_residual(run, mf) <= 1e-10


def test_points_without_pure_fixed_point():
    # the middle agent's best response flips with its own choice
    pts = np.array([[-0.6], [0.2], [0.9]])
    sc = scalar_scenario(q=1.0, initial=PointsInitial(pts), steps=300)
    with pytest.raises(ConvergenceError):
        find_fixed_point(sc, tol=1e-12)


def test_residual_shrinks_with_N(swarm_q40_coop):
    sc, mf = swarm_q40_coop
    small = mean_path_residual(simulate_decentralized(sample_population(sc, 400, 1), mf), mf)
    large = mean_path_residual(simulate_decentralized(sample_population(sc, 10_000, 1), mf), mf)
    assert large < small


def test_choice_consistency_swarm(swarm_q40_coop):
    sc, mf = swarm_q40_coop
    run = simulate_decentralized(sample_population(sc, 400, 3), mf, store_paths=True)
    xT = run.states[-1]
    nearest = np.argmin(np.linalg.norm(xT[:, None, :] - sc.destinations[None], axis=2), axis=1)
    assert np.array_equal(nearest, run.choice)


def test_determinism(swarm_q40_coop):
    sc, mf = swarm_q40_coop
    a = simulate_decentralized(sample_population(sc, 200, 8), mf)
    b = simulate_decentralized(sample_population(sc, 200, 8), mf)
    assert a.J_soc == b.J_soc and np.array_equal(a.costs, b.costs)
    assert np.array_equal(a.mean_path.values, b.mean_path.values)


def test_convergence_experiment_q0_zero_gap():
    sc = scalar_scenario(q=0.0, Z=0.0, steps=500)
    rows = convergence_experiment(sc, [1, 2, 3], seed=0)
    assert all(abs(r.gap) <= 1e-6 for r in rows)


def test_convergence_experiment_lower_bound():
    sc = scalar_scenario(q=1.0, Z=-1.0, steps=300)
    rows = convergence_experiment(sc, [2, 3, 4], seed=5)
    assert all(r.gap >= -1e-6 for r in rows)
    assert [r.N for r in rows] == [2, 3, 4]


def test_remark1_monotonicity_small():
    sc = swarm_scenario(q=0.0, steps=500)
    sample = sample_population(sc, 400, 7)
    base = simulate_decentralized(sample, find_fixed_point(sc)).counts[1]
    heavy = sc.with_(atoms=(sc.atoms[0].with_(M=[1200.0, 12000.0]),))
    assert simulate_decentralized(sample, find_fixed_point(heavy)).counts[1] <= base


def test_two_atom_population():
    base = scalar_scenario(q=1.0, steps=300)
    a1 = base.atoms[0].with_(weight=0.4)
    a2 = AgentTypeAtom([[0.2]], [[1.0]], 2.0, [10.0, 10.0], weight=0.6)
    sc = base.with_(atoms=(a1, a2))
    mf = find_fixed_point(sc)
    run = simulate_decentralized(sample_population(sc, 500, 0), mf, store_paths=True)
    per = trajectory_costs(run.states, run.controls, run.sample.atom_index, sc, mf.grid)
    assert np.allclose(per, run.costs, rtol=1e-9)
