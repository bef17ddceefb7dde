import numpy as np
import pytest
from numpy.testing import assert_allclose

from errors import ConnectivityError, SolverError
from instances import random_metzler, random_network, random_params, random_susceptible
from model_core import EpidemicParams, NetworkSpec, assemble_quarantine_matrix, assemble_travel_matrix
from spectral import (dominant_eigenpair, grad_lambda_quarantine, grad_lambda_travel, is_irreducible,
                      is_metzler, lambda_max, reproduction_number, stability_certificate)

FD_STEP = 1e-6


def rightmost(M):
    return float(np.max(np.linalg.eigvals(M).real))


def travel_objective(net, s0, p):
    return lambda tau_vec: lambda_max(assemble_travel_matrix(s0, tau_vec, p, net.populations))


def central_difference(f, x, h=FD_STEP):
    grad = np.empty_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        grad[i] = (f(x + step) - f(x - step)) / (2 * h)
    return grad


def max_relative_error(actual, expected):
    scale = max(np.max(np.abs(expected)), 1e-12)
    return float(np.max(np.abs(actual - expected)) / scale)


def test_scaled_identity():
    n = 3
    M = -0.7 * np.eye(2 * n) + 1e-9 * (np.ones((2 * n, 2 * n)) - np.eye(2 * n))
    eig = dominant_eigenpair(M)
    assert eig.lam == pytest.approx(-0.7, abs=1e-8)
    assert_allclose(eig.u, np.full(2 * n, 1 / np.sqrt(2 * n)), atol=1e-8)
    assert_allclose(eig.v, np.full(2 * n, 1 / np.sqrt(2 * n)), atol=1e-8)


def test_single_node_fixture_eigenvalue():
    M = np.array([[-0.38492, 0.2], [0.32, -0.2]])
    eig = dominant_eigenpair(M)
    assert eig.lam == pytest.approx(-0.02311, abs=1e-5)
    assert eig.lam == pytest.approx(rightmost(M), abs=1e-12)


def test_eigenpair_properties(rng):
    for _ in range(20):
        M = random_metzler(rng, 6)
        eig = dominant_eigenpair(M)
        assert eig.lam == pytest.approx(rightmost(M), abs=1e-9)
        assert np.all(eig.u > 0) and np.all(eig.v > 0)
        assert eig.overlap > 0
        assert np.linalg.norm(M @ eig.u - eig.lam * eig.u) <= 1e-10
        assert np.linalg.norm(eig.v @ M - eig.lam * eig.v) <= 1e-10
        assert np.linalg.norm(eig.u) == pytest.approx(1.0)


def test_fixture_matrix_eigenvalue(fixture_model):
    net, params, state0, _ = fixture_model
    M = assemble_travel_matrix(state0.s, net.tau_vec, params, net.populations)
    assert dominant_eigenpair(M).lam == pytest.approx(rightmost(M), abs=1e-9)
    assert dominant_eigenpair(M).lam == pytest.approx(0.3, abs=1e-8)


def test_preconditions_are_enforced():
    with pytest.raises(SolverError, match="Metzler"):
        dominant_eigenpair(np.array([[0.0, -1.0], [1.0, 0.0]]))
    with pytest.raises(ConnectivityError):
        dominant_eigenpair(np.array([[-1.0, 1.0], [0.0, -2.0]]))
    with pytest.raises(ValueError):
        dominant_eigenpair(np.ones(3))


def test_structure_predicates():
    assert is_metzler(np.array([[-5.0, 0.1], [0.0, -1.0]]))
    assert not is_metzler(np.array([[1.0, -0.1], [0.2, 1.0]]))
    assert is_irreducible(np.array([[-1.0, 1.0], [2.0, -1.0]]))
    assert not is_irreducible(np.diag([1.0, 2.0]))


def test_zero_transmission_has_zero_travel_gradient(rng):
    net = random_network(rng, 3)
    p = EpidemicParams(beta_a=0.0, beta_s=0.0)
    grad = grad_lambda_travel(net, np.ones(3), p)
    assert_allclose(grad, 0.0, atol=1e-15)


def test_single_node_travel_gradient(single_node):
    net, params, s0 = single_node
    grad = grad_lambda_travel(net, s0, params)
    expected = central_difference(travel_objective(net, s0, params), net.tau_vec)
    assert max_relative_error(grad, expected) <= 1e-5


def test_travel_gradient_matches_finite_differences(rng):
    for _ in range(50):
        n = int(rng.integers(1, 6))
        net = random_network(rng, n)
        p = random_params(rng)
        s0 = random_susceptible(rng, n)
        grad = grad_lambda_travel(net, s0, p)
        expected = central_difference(travel_objective(net, s0, p), net.tau_vec)
        assert max_relative_error(grad, expected) <= 1e-5


def test_quarantine_gradient_matches_finite_differences(rng):
    for _ in range(50):
        n = int(rng.integers(1, 6))
        net = random_network(rng, n)
        p = random_params(rng)
        s0 = random_susceptible(rng, n)
        q0 = rng.uniform(0.0, 0.9, 2 * n)
        objective = lambda q: lambda_max(assemble_quarantine_matrix(s0, net.flow, p, q))
        grad = grad_lambda_quarantine(assemble_quarantine_matrix(s0, net.flow, p, q0))
        assert max_relative_error(grad, central_difference(objective, q0)) <= 1e-5


def test_quarantine_gradient_sign_and_normalization(rng):
    net = random_network(rng, 4)
    p = random_params(rng)
    s0 = random_susceptible(rng, 4)
    grad = grad_lambda_quarantine(assemble_quarantine_matrix(s0, net.flow, p, np.zeros(8)))
    assert np.all(grad < 0)
    assert np.sum(np.abs(grad)) == pytest.approx(1.0, abs=1e-12)


def test_lambda_is_convex_and_decreasing_in_quarantine(rng):
    net = random_network(rng, 3)
    p = random_params(rng)
    s0 = random_susceptible(rng, 3)
    f = lambda q: lambda_max(assemble_quarantine_matrix(s0, net.flow, p, q))
    for _ in range(100):
        q1, q2 = rng.uniform(0, 1, 6), rng.uniform(0, 1, 6)
        theta = rng.uniform()
        assert f(theta * q1 + (1 - theta) * q2) <= theta * f(q1) + (1 - theta) * f(q2) + 1e-10
    q = rng.uniform(0, 0.5, 6)
    for i in range(6):
        bumped = q.copy()
        bumped[i] += 0.1
        assert f(bumped) < f(q)


def test_lambda_is_continuous_in_travel_rates(rng):
    net = random_network(rng, 3)
    p = random_params(rng)
    s0 = random_susceptible(rng, 3)
    f = travel_objective(net, s0, p)
    direction = rng.uniform(0, 1, net.tau_vec.size)
    gaps = [abs(f(net.tau_vec + scale * direction) - f(net.tau_vec)) for scale in (1e-2, 1e-4, 1e-6)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-4


def test_reproduction_number_without_transmission(rng):
    net = random_network(rng, 3)
    assert reproduction_number(np.ones(3), net.flow, EpidemicParams(beta_a=0.0, beta_s=0.0)) == 0.0


def test_single_node_reproduction_number():
    a, s = 0.3, 0.95
    p = EpidemicParams(beta_a=0.4, beta_s=0.7)
    q_a, q_s = 0.1, 0.25
    expected = s * a * (p.beta_a / (p.epsilon + p.r_a + q_a)
                        + p.beta_s * p.epsilon / ((p.epsilon + p.r_a + q_a) * (p.r_s + q_s)))
    actual = reproduction_number(np.array([s]), np.array([[a]]), p, np.array([q_a, q_s]))
    assert actual == pytest.approx(expected, abs=1e-12)


def test_reproduction_number_agrees_with_stability(rng):
    checked = 0
    while checked < 100:
        n = int(rng.integers(1, 5))
        net = random_network(rng, n)
        p = random_params(rng)
        s0 = random_susceptible(rng, n)
        q = rng.uniform(0, 0.5, 2 * n)
        lam = lambda_max(assemble_quarantine_matrix(s0, net.flow, p, q))
        if abs(lam) < 1e-8:
            continue
        assert np.sign(reproduction_number(s0, net.flow, p, q) - 1) == np.sign(lam)
        checked += 1


def test_certificate_for_hurwitz_matrix():
    P = -np.eye(4) + 0.01 * (np.ones((4, 4)) - np.eye(4))
    d = stability_certificate(P)
    assert d is not None
    assert np.all(d > 0)
    assert np.all(P @ d <= 1e-12 * np.linalg.norm(P) * np.linalg.norm(d))


def test_no_certificate_for_unstable_matrix():
    base = np.array([[-1.0, 0.5], [0.5, -1.0]])
    lam = rightmost(base)
    assert stability_certificate(base + (0.1 - lam) * np.eye(2)) is None


def test_certificates_hold_on_random_stable_matrices(rng):
    for _ in range(20):
        P = random_metzler(rng, 5)
        P -= (rightmost(P) + rng.uniform(0.01, 1.0)) * np.eye(5)
        d = stability_certificate(P)
        assert d is not None
        assert np.all(P @ d <= 1e-12 * np.linalg.norm(P) * np.linalg.norm(d))


def test_travel_gradient_accepts_precomputed_eigenpair(fixture_model):
    net, params, state0, _ = fixture_model
    M = assemble_travel_matrix(state0.s, net.tau_vec, params, net.populations)
    eig = dominant_eigenpair(M)
    assert_allclose(grad_lambda_travel(net, state0.s, params, eig=eig),
                    grad_lambda_travel(net, state0.s, params), rtol=1e-9, atol=1e-12)


def test_unvisited_location_has_zero_gradient():
    net = NetworkSpec.from_tau(np.array([[0.3, 0.0], [0.05, 0.0]]), np.array([100.0, 300.0]))
    grad = grad_lambda_travel(net, np.ones(2), EpidemicParams.from_beta_s(0.5))
    assert np.all(np.isfinite(grad))
    # column-major: entries 2 and 3 are the travel rates into location 1
    assert_allclose(grad[2:], 0.0)
