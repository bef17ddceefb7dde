"""Random problem instances for property tests."""

import numpy as np

from errors import SolverError
from mobility import calibrate_beta
from model_core import EconomicCosts, EpidemicParams, NetworkSpec
from quarantine_opt import feasibility_check


def random_network(rng, n, self_share=0.7, t_out=1.0 / 3.0):
    """Dense travel network whose rows sum to t_out with most time spent at home"""
    trips = rng.uniform(0.05, 1.0, size=(n, n))
    np.fill_diagonal(trips, 0.0)
    trips *= (1.0 - self_share) / trips.sum(axis=1, keepdims=True) if n > 1 else 0.0
    np.fill_diagonal(trips, self_share if n > 1 else 1.0)
    populations = rng.uniform(5e4, 2e5, size=n)
    return NetworkSpec.from_tau(t_out * trips, populations)


def random_params(rng, beta_s=None):
    beta_s = rng.uniform(0.2, 2.0) if beta_s is None else beta_s
    return EpidemicParams(beta_a=rng.uniform(0.2, 1.0) * beta_s, beta_s=beta_s,
                          epsilon=rng.uniform(0.1, 0.5), r_a=rng.uniform(0.1, 0.3),
                          r_s=rng.uniform(0.1, 0.3))


def random_metzler(rng, n, shift=0.0):
    M = rng.uniform(0.0, 1.0, size=(n, n))
    np.fill_diagonal(M, rng.uniform(-3.0, 0.0, size=n) + shift)
    return M


def random_susceptible(rng, n):
    return rng.uniform(0.9, 1.0, size=n)


def feasible_quarantine_instance(rng, n=2, alpha=0.0231, attempts=200):
    """(s0, flow, params, costs) calibrated to a fast-growing epidemic that quarantine can stop"""
    for _ in range(attempts):
        net = random_network(rng, n, self_share=rng.uniform(0.85, 0.95))
        s0 = random_susceptible(rng, n)
        base = EpidemicParams.from_beta_s(0.0)
        try:
            beta_a, beta_s = calibrate_beta(net.flow, s0, base, rng.uniform(0.55, 0.85))
        except SolverError:
            continue
        params = base.with_betas(beta_a, beta_s)
        report = feasibility_check(s0, net.flow, params, alpha)
        if report.feasible and report.assumption1_holds:
            costs = EconomicCosts.from_gdp(rng.uniform(0.3, 1.0, size=n))
            return s0, net.flow, params, costs
    raise RuntimeError("no feasible quarantine instance found")
