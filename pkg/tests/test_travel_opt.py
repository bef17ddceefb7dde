import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from errors import ConfigError
from instances import random_network, random_params, random_susceptible
from mobility import calibrate_beta
from model_core import EpidemicParams, assemble_travel_matrix
from spectral import grad_lambda_travel, lambda_max
from travel_opt import (STATIONARITY_TOL, TravelSolveOptions, budget_sweep, optimize_travel,
                        project_travel, projected_gradient_residual, solve_budgets)


def breakpoint_projection(y, tau0, b, lower=None):
    """Exact projection by walking the piecewise-linear l1 distance between its breakpoints"""
    d = y - tau0
    floor = np.zeros_like(tau0) if lower is None else lower
    caps = np.where(d < 0, tau0 - floor, np.inf)

    def moved(mu):
        return np.minimum(caps, np.maximum(np.abs(d) - mu, 0.0))

    def point(mu):
        return tau0 + np.sign(d) * moved(mu)

    if np.abs(point(0.0) - tau0).sum() <= b:
        return point(0.0)
    knots = np.abs(d)
    clipped_at = knots - caps
    knots = np.unique(np.concatenate([[0.0], knots, clipped_at[np.isfinite(clipped_at) & (clipped_at > 0)]]))
    distance = [moved(mu).sum() for mu in knots]
    for k in range(len(knots) - 1):
        if distance[k] >= b >= distance[k + 1]:
            share = (distance[k] - b) / (distance[k] - distance[k + 1])
            return point(knots[k] + share * (knots[k + 1] - knots[k]))
    return tau0.copy()


def small_problem(rng, n=3):
    net = random_network(rng, n)
    return net, random_susceptible(rng, n), random_params(rng)


def test_feasible_point_is_returned_unchanged():
    tau0 = np.array([0.2, 0.1, 0.0])
    y = np.array([0.25, 0.05, 0.01])
    assert_array_equal(project_travel(y, tau0, 0.2), y)


def test_zero_budget_projects_onto_center():
    tau0 = np.array([0.2, 0.1, 0.3])
    assert_array_equal(project_travel(np.array([1.0, -1.0, 0.0]), tau0, 0.0), tau0)


def test_negative_entries_are_clipped_when_budget_allows():
    tau0 = np.array([0.2, 0.1])
    assert_allclose(project_travel(np.array([0.2, -0.5]), tau0, 1.0), [0.2, 0.0])


def test_projection_matches_breakpoint_oracle(rng):
    for _ in range(200):
        tau0 = rng.uniform(0.0, 1.0, 6)
        y = tau0 + rng.normal(0.0, 0.5, 6)
        b = rng.uniform(0.0, 1.5)
        projected = project_travel(y, tau0, b)
        assert np.linalg.norm(projected - breakpoint_projection(y, tau0, b)) <= 1e-8
        assert np.all(projected >= 0)
        assert np.abs(projected - tau0).sum() <= b + 1e-9


def test_projection_is_the_nearest_feasible_point(rng):
    for _ in range(50):
        tau0 = rng.uniform(0.0, 1.0, 6)
        y = tau0 + rng.normal(0.0, 0.5, 6)
        b = rng.uniform(0.1, 1.0)
        projected = project_travel(y, tau0, b)
        vertices = [np.maximum(tau0 + sign * b * np.eye(6)[i], 0.0) for i in range(6) for sign in (1, -1)]
        for w in vertices:
            assert (y - projected) @ (w - projected) <= 1e-8


def test_projection_is_idempotent(rng):
    for _ in range(50):
        tau0 = rng.uniform(0.0, 1.0, 6)
        y = tau0 + rng.normal(0.0, 0.5, 6)
        once = project_travel(y, tau0, 0.4)
        assert_allclose(project_travel(once, tau0, 0.4), once, atol=1e-12, rtol=0)


def test_projection_respects_lower_bound(rng):
    for _ in range(200):
        tau0 = rng.uniform(0.0, 1.0, 6)
        lower = 0.05 * tau0
        y = tau0 + rng.normal(0.0, 0.5, 6)
        b = rng.uniform(0.0, 3.0)
        projected = project_travel(y, tau0, b, lower)
        assert np.linalg.norm(projected - breakpoint_projection(y, tau0, b, lower)) <= 1e-8
        assert np.all(projected >= lower)
        assert np.abs(projected - tau0).sum() <= b + 1e-9


def test_zero_budget_keeps_current_rates(rng):
    net, s0, p = small_problem(rng)
    solution = optimize_travel(net, s0, p, TravelSolveOptions(budget=0.0))
    assert_array_equal(solution.tau_star, net.tau_vec)
    assert solution.f_star == pytest.approx(
        lambda_max(assemble_travel_matrix(s0, net.tau_vec, p, net.populations)))
    assert solution.trace.message == "zero budget"


def test_objective_never_increases(rng):
    for _ in range(5):
        net, s0, p = small_problem(rng)
        solution = optimize_travel(net, s0, p, TravelSolveOptions(budget=0.1, max_iters=300))
        assert np.all(np.diff(solution.trace.objective) <= 0)
        assert solution.f_star <= solution.trace.objective[0]


def test_every_iterate_stays_feasible(rng):
    net, s0, p = small_problem(rng)
    solution = optimize_travel(net, s0, p, TravelSolveOptions(budget=0.15, max_iters=300))
    assert max(solution.trace.distances) <= 0.15 + 1e-9
    assert np.all(solution.tau_star >= 0)


def test_stationary_at_convergence(rng):
    net, s0, p = small_problem(rng, n=2)
    opts = TravelSolveOptions(budget=0.05)
    solution = optimize_travel(net, s0, p, opts)
    grad = grad_lambda_travel(net, s0, p, solution.tau_star)
    residual = projected_gradient_residual(solution.tau_star, grad, net.tau_vec, 0.05,
                                           opts.lower_bound(net.tau_vec))
    assert residual <= 1e-5
    assert solution.f_star < solution.trace.objective[0]


def test_budget_beyond_total_travel_stays_above_the_floor(rng):
    net, s0, p = small_problem(rng)
    opts = TravelSolveOptions(budget=2.0 * net.tau_vec.sum(), max_iters=500)
    solution = optimize_travel(net, s0, p, opts)
    assert np.all(solution.tau_star >= opts.lower_bound(net.tau_vec) - 1e-12)
    if solution.trace.converged:
        assert solution.trace.residuals[-1] <= STATIONARITY_TOL
    assert solution.f_star < solution.trace.objective[0]


def test_small_steps_alone_do_not_count_as_convergence(rng):
    net, s0, p = small_problem(rng)
    solution = optimize_travel(net, s0, p, TravelSolveOptions(budget=0.2, step_tol=10.0, max_iters=3))
    if solution.trace.converged:
        assert solution.trace.residuals[-1] <= STATIONARITY_TOL
    else:
        assert solution.trace.iterations == 3


def test_masked_entries_stay_fixed(rng):
    net, s0, p = small_problem(rng)
    mask = np.zeros(9, dtype=bool)
    mask[[0, 4, 8]] = True
    solution = optimize_travel(net, s0, p, TravelSolveOptions(budget=0.2, max_iters=200, mask=mask))
    assert_array_equal(solution.tau_star[mask], net.tau_vec[mask])


def test_warm_start_must_be_feasible(rng):
    net, s0, p = small_problem(rng)
    with pytest.raises(ConfigError, match="warm start"):
        optimize_travel(net, s0, p, TravelSolveOptions(budget=0.01, start=net.tau_vec + 0.1))


def test_warm_start_below_the_floor_is_rejected(rng):
    net, s0, p = small_problem(rng)
    with pytest.raises(ConfigError, match="warm start"):
        optimize_travel(net, s0, p, TravelSolveOptions(budget=5.0, start=0.01 * net.tau_vec))


def test_bad_options_are_config_errors():
    with pytest.raises(ConfigError):
        TravelSolveOptions(budget=-1.0)
    with pytest.raises(ConfigError):
        TravelSolveOptions(beta_bt=1.0)
    with pytest.raises(ConfigError, match="support floor"):
        TravelSolveOptions(support_floor=1.0)


def test_budgets_must_ascend(rng):
    net, s0, p = small_problem(rng)
    with pytest.raises(ConfigError, match="ascending"):
        solve_budgets(net, s0, p, [0.2, 0.1])


def test_sweep_is_nonincreasing(rng):
    net, s0, p = small_problem(rng)
    sweep = budget_sweep(net, s0, p, [0.0, 0.05, 0.1, 0.2], TravelSolveOptions(max_iters=200),
                         max_workers=2)
    assert [b for b, _ in sweep] == [0.0, 0.05, 0.1, 0.2]
    values = [f for _, f in sweep]
    assert all(later <= earlier for earlier, later in zip(values, values[1:]))


def test_solution_serializes(rng):
    net, s0, p = small_problem(rng, n=2)
    out = optimize_travel(net, s0, p, TravelSolveOptions(budget=0.02, max_iters=20)).to_dict(2)
    assert np.array(out["tau_star"]).shape == (2, 2)
    assert out["budget"] == 0.02


@pytest.mark.slow
def test_fixture_budget_sweep(fixture_model):
    net, params, state0, _ = fixture_model
    sweep = dict(budget_sweep(net, state0.s, params, [0, 5, 10, 20, 25],
                              TravelSolveOptions(max_iters=500)))
    values = [sweep[b] for b in (0.0, 5.0, 10.0, 20.0, 25.0)]
    assert values[0] == pytest.approx(0.3, abs=1e-8)
    assert all(later <= earlier + 1e-12 for earlier, later in zip(values, values[1:]))
    assert values[1] < values[0]
    assert values[-1] < 0


@pytest.mark.slow
@pytest.mark.parametrize("growth", [0.3, 0.62])
def test_fixture_large_budget_reaches_decay(fixture_model, growth):
    net, _, state0, _ = fixture_model
    base = EpidemicParams.from_beta_s(0.0)
    params = base.with_betas(*calibrate_beta(net.flow, state0.s, base, growth))
    opts = TravelSolveOptions(budget=25.0, max_iters=2000)
    solution = optimize_travel(net, state0.s, params, opts)
    assert solution.f_star < 0
    assert np.all(solution.tau_star >= opts.lower_bound(net.tau_vec) - 1e-12)
    if solution.trace.converged:
        assert solution.trace.residuals[-1] <= STATIONARITY_TOL
