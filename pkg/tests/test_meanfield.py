import numpy as np
import pytest

from mfchoice.errors import ConvergenceError
from mfchoice.meanfield import (
    InitialMeasure,
    MeanFieldOperator,
    apply_G,
    asymptotic_social_cost,
    check_assumptions,
    compute_basins,
    expected_branch_cost,
    find_fixed_point,
    gaussian_halfspace_moments,
    sup_distance,
    uncontrolled_mean,
)
from mfchoice.numerics import SampledPath
from mfchoice.riccati import branch_cost
from mfchoice.scenario import (
    NONCOOPERATIVE,
    AgentTypeAtom,
    GaussianInitial,
    PointsInitial,
    Scenario,
    SolverOptions,
    swarm_scenario,
)

from conftest import scalar_scenario, symmetric_scenario


def test_single_destination_basin_is_everything():
    sc = Scenario(
        horizon=1.0, q=0.0, Z=[[0.0]], destinations=[[1.0]],
        atoms=[AgentTypeAtom([[0.0]], [[1.0]], 1.0, [1.0])],
        initial=GaussianInitial([0.0], [[1.0]]), steps=100,
    )
    sol = find_fixed_point(sc)
    assert np.all(sol.classify(np.linspace(-50, 50, 11)[:, None]) == 0)
    assert sol.fractions.tolist() == [1.0]


def test_symmetric_q0_boundary_at_origin():
    sc = scalar_scenario(q=0.0, Z=0.0, M=1.0, mean=0.0)
    sol = find_fixed_point(sc)
    rows = sol.classifier.rows[0]
    assert np.all(rows.quad == 0.0)
    x = np.array([[-1e-3], [-1e-9], [0.0], [1e-9], [1e-3]])
    # exact tie at 0 goes to the smaller index
    assert sol.classify(x).tolist() == [0, 0, 0, 1, 1]


def test_classifier_matches_argmin(swarm_q40_coop):
    sc, sol = swarm_q40_coop
    rng = np.random.default_rng(1)
    x = rng.normal([-5, 10], 6.0, size=(1000, 2))
    costs = np.array([branch_cost(sol.bundle(0, j), x) for j in range(2)])
    assert np.array_equal(sol.classify(x), np.argmin(costs, axis=0))


def test_classifier_argmin_with_quadric_basins():
    # unequal terminal weights make Gamma_1 != Gamma_2: genuinely quadric boundaries
    atom = AgentTypeAtom([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], 1.0, [5.0, 50.0])
    sc = Scenario(
        horizon=1.0, q=0.5, Z=2.0 * np.eye(2), destinations=[[-1.0, 0.0], [1.0, 0.0], [0.0, 2.0]],
        atoms=[atom.with_(M=[5.0, 50.0, 20.0])], initial=GaussianInitial([0.0, 0.0], np.eye(2)),
        steps=200, solver=SolverOptions(mc_samples=2000),
    )
    sol = find_fixed_point(sc)
    assert not sol.classifier.rows[0].is_halfspace()
    x = np.random.default_rng(2).normal(0, 2, size=(1000, 2))
    costs = np.array([branch_cost(sol.bundle(0, j), x) for j in range(3)])
    idx = sol.classify(x)
    assert np.array_equal(idx, np.argmin(costs, axis=0))
    assert set(np.unique(idx)) <= {0, 1, 2}


def test_gaussian_halfspace_moments_against_sampling():
    mean = np.array([0.5, -1.0])
    cov = np.array([[2.0, 0.3], [0.3, 0.5]])
    a, c = np.array([1.0, 2.0]), 0.7
    mass, first = gaussian_halfspace_moments(a, c, mean, cov)
    x = np.random.default_rng(0).multivariate_normal(mean, cov, size=400_000)
    inside = x @ a + c <= 0
    assert abs(mass[0] - inside.mean()) < 4e-3
    assert np.allclose(first[0], (x * inside[:, None]).mean(axis=0), atol=1e-2)
    assert np.allclose(first.sum(axis=0), mean)
    assert mass.sum() == pytest.approx(1.0, abs=1e-15)


def test_degenerate_gaussian_moments():
    mass, first = gaussian_halfspace_moments(np.array([1.0]), -1.0, np.array([0.5]), np.zeros((1, 1)))
    assert mass.tolist() == [1.0, 0.0]
    assert first[0].tolist() == [0.5]


def test_G_constant_at_q0():
    sc = swarm_scenario(q=0.0, steps=500)
    g = sc.grid
    a = SampledPath(g, np.zeros((501, 2)))
    b = SampledPath(g, np.outer(g.times, [3.0, -7.0]))
    assert np.array_equal(apply_G(a, sc).values, apply_G(b, sc).values)


def test_G_symmetric_scenario():
    sc = symmetric_scenario(q=1.0)
    zero = SampledPath(sc.grid, np.zeros((sc.steps + 1, 1)))
    assert np.max(np.abs(apply_G(zero, sc).values)) <= 1e-12


def test_q0_converges_in_one_step(swarm_q0):
    sc, sol = swarm_q0
    assert sol.iterations == 1
    assert sol.residual == 0.0


def test_symmetric_fixed_point():
    sc = symmetric_scenario(q=1.0)
    sol = find_fixed_point(sc)
    assert sol.fractions == pytest.approx([0.5, 0.5], abs=1e-15)
    assert np.max(np.abs(sol.xbar.values)) <= 1e-9


def test_fixed_point_certificate(swarm_q40_coop, swarm_q40_noncoop):
    for sc, sol in (swarm_q40_coop, swarm_q40_noncoop):
        fresh = apply_G(sol.xbar, sc)
        assert sup_distance(fresh, sol.xbar) <= sc.solver.tol
        assert sol.residual <= 1e-3


def test_swarm_splits(swarm_q0, swarm_q40_coop, swarm_q40_noncoop):
    lam0 = swarm_q0[1].fractions
    assert lam0[1] == pytest.approx(0.82, abs=0.02)
    assert abs(swarm_q40_coop[1].fractions[0] - 0.5) < abs(lam0[0] - 0.5)
    assert swarm_q40_noncoop[1].fractions[1] >= 0.99


def test_modes_share_all_but_L():
    coop = swarm_scenario(q=10.0, steps=300)
    non = coop.with_(mode=NONCOOPERATIVE)
    op_c, op_n = MeanFieldOperator(coop), MeanFieldOperator(non)
    assert np.array_equal(op_c.gamma(0, 1).values, op_n.gamma(0, 1).values)
    assert np.array_equal(op_c.L, 5.25 * np.eye(2))
    assert np.array_equal(op_n.L, -3.5 * np.eye(2))
    # with xbar = 0 the forcing vanishes and the two modes coincide
    assert np.array_equal(op_c.bundles(None)[0, 1].beta.values, op_n.bundles(None)[0, 1].beta.values)


def test_nonconvergence_carries_history():
    sc = swarm_scenario(q=40.0, steps=300, max_iter=2)
    with pytest.raises(ConvergenceError) as info:
        find_fixed_point(sc)
    assert len(info.value.history) == 3
    assert info.value.exit_code == 3


def test_uncontrolled_initial_guess():
    sc = scalar_scenario(mean=0.7)
    assert np.all(np.abs(uncontrolled_mean(sc).values - 0.7) < 1e-15)


def test_basin_coverage_and_boundary_measure(swarm_q40_coop):
    sc, sol = swarm_q40_coop
    x = sc.initial.sample(np.random.default_rng(3), 10_000)
    idx = sol.classify(x)
    assert idx.shape == (10_000,) and set(np.unique(idx)) <= {0, 1}
    rows = sol.classifier.rows[0]
    gap = np.abs(rows.pairwise(x)[0, 1])
    assert np.mean(gap <= 1e-9 * np.linalg.norm(rows.lin[0, 1])) == 0.0


def test_measure_modes():
    pts = PointsInitial([[0.0], [2.0]])
    m = InitialMeasure(pts)
    assert m.samples is pts.points
    g = InitialMeasure(GaussianInitial([1.0], [[4.0]]), mc_samples=50, seed=9)
    assert g.samples.shape == (50, 1)
    assert np.array_equal(g.samples, InitialMeasure(GaussianInitial([1.0], [[4.0]]), 50, 9).samples)


def test_check_assumptions_swarm():
    rep = check_assumptions(swarm_scenario(q=40.0, steps=400), k3_points=21)
    assert rep["L_eigenvalues"] == pytest.approx([5.25, 5.25])
    assert rep["assumption2_holds"]
    assert rep["second_moment"] == pytest.approx(155.0)
    assert rep["k1"] > 0 and rep["k2"] > 0 and rep["k3"] > 0


def test_check_assumptions_z_identity():
    sc = swarm_scenario(steps=200).with_(Z=np.eye(2))
    rep = check_assumptions(sc, k3_points=11)
    assert rep["L_eigenvalues"] == pytest.approx([-1.0, -1.0])
    assert not rep["assumption2_holds"]


def test_check_assumptions_short_horizon_holds():
    sc = Scenario(
        horizon=0.1, q=1.0, Z=[[-1.0]], destinations=[[-1.0], [1.0]],
        atoms=[AgentTypeAtom([[0.0]], [[1.0]], 1.0, [1.0, 1.0])],
        initial=PointsInitial([[1.0]]), steps=100,
    )
    rep = check_assumptions(sc)
    # |Phi| <= e^{cT} with c = max Gamma S <= 1 here, so each bound is a small multiple of e^{0.1}
    assert rep["k1"] <= 2 * np.exp(0.1) + 1e-12
    assert rep["assumption1_holds"]


def test_asymptotic_cost_q0_identity(swarm_q0):
    sc, sol = swarm_q0
    # q = 0: no coupling correction, and the closed form equals E[min branch cost] by sampling
    assert asymptotic_social_cost(sol) == expected_branch_cost(sol)
    x = sc.initial.sample(np.random.default_rng(0), 200_000)
    costs = np.array([branch_cost(sol.bundle(0, j), x) for j in range(2)]).min(axis=0)
    assert abs(costs.mean() - asymptotic_social_cost(sol)) < 4 * costs.std() / np.sqrt(x.shape[0])


def test_asymptotic_cost_point_mass_tie():
    sc = scalar_scenario(q=0.0, Z=0.0, M=1.0, initial=PointsInitial([[0.0]]), steps=1000)
    sol = find_fixed_point(sc)
    assert asymptotic_social_cost(sol) == pytest.approx(0.25, abs=1e-6)


def test_asymptotic_cost_analytic_vs_sampled(swarm_q40_coop):
    sc, sol = swarm_q40_coop
    # the same formula evaluated by averaging over explicit samples
    pts = sc.initial.sample(np.random.default_rng(4), 100_000)
    sampled = InitialMeasure(PointsInitial(pts))
    sol_pts = type(sol)(**{**sol.__dict__, "measure": sampled})
    a, b = expected_branch_cost(sol), expected_branch_cost(sol_pts)
    assert abs(a - b) / abs(a) < 5e-3


def test_explicit_points_measure_exact_summation():
    pts = np.array([[-0.8], [0.1], [0.5]])
    sc = scalar_scenario(q=0.5, initial=PointsInitial(pts), steps=300)
    op = MeanFieldOperator(sc)
    res = op(uncontrolled_mean(sc))
    bundles = res.bundles
    idx = res.classifier.classify(pts)
    manual = np.zeros_like(res.path.values)
    for i, x in enumerate(pts):
        Phi, resp = bundles[0, idx[i]].closed_loop_parts()
        manual += (Phi @ x + resp) / 3
    assert np.max(np.abs(manual - res.path.values)) < 1e-13


def test_adaptive_damping_breaks_cycle():
    sc = scalar_scenario(q=4.0, mean=0.3, solver=SolverOptions(damping=0.3))
    with pytest.raises(ConvergenceError):
        find_fixed_point(sc, adaptive=False, max_iter=200)
    sol = find_fixed_point(sc)
    assert sol.residual <= sc.solver.tol


def test_basins_from_bundles_direct(swarm_q0):
    sc, sol = swarm_q0
    rows = compute_basins([sol.bundle(0, 0), sol.bundle(0, 1)])
    assert np.array_equal(rows.lin, sol.classifier.rows[0].lin)
    assert rows.is_halfspace()
