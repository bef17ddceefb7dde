#!/usr/bin/env python3
"""
Travel-rate optimization: minimize the dominant eigenvalue of the travel
matrix M(t0, tau) over tau >= floor * tau0 with ||tau - tau0||_1 <= b, by
projected gradient descent with backtracking. The floor keeps every route of
the current network open, so the infection-flow matrix stays irreducible and
its dominant eigenvalue stays simple along the whole path.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError, ConnectivityError, ConvergenceError, SolverError
from log_setup import get_logger
from mobility import check_strong_connectivity
from model_core import (EpidemicParams, NetworkSpec, SolveTrace, assemble_travel_matrix,
                        infection_flow, unvec)
from spectral import dominant_eigenpair, grad_lambda_travel

logger = get_logger(__name__)

PROJECTION_TOL = 1e-10
PROJECTION_MAX_ITER = 200
STATIONARITY_TOL = 1e-6
FEASIBILITY_SLACK = 1e-9


@dataclass(frozen=True)
class TravelSolveOptions:
    budget: float = 0.0
    beta_bt: float = 0.5
    max_iters: int = 5000
    grad_tol: float = 1e-8
    step_tol: float = 1e-8
    min_step: float = 1e-14
    support_floor: float = 0.05
    mask: Optional[np.ndarray] = None
    start: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.budget >= 0:
            raise ConfigError(f"travel budget must be nonnegative, got {self.budget}")
        if not 0 < self.beta_bt < 1:
            raise ConfigError(f"backtracking factor must lie in (0, 1), got {self.beta_bt}")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be nonnegative")
        if not 0 <= self.support_floor < 1:
            raise ConfigError(f"support floor must lie in [0, 1), got {self.support_floor}")

    def lower_bound(self, tau0: np.ndarray) -> np.ndarray:
        return self.support_floor * np.asarray(tau0, dtype=float)


@dataclass
class TravelSolution:
    tau_star: np.ndarray
    f_star: float
    budget: float
    trace: SolveTrace = field(default_factory=SolveTrace)

    @property
    def iterations(self) -> int:
        return self.trace.iterations

    def to_dict(self, n: Optional[int] = None) -> dict:
        return {
            "budget": self.budget,
            "f_star": self.f_star,
            "iterations": self.iterations,
            "converged": self.trace.converged,
            "tau_star": unvec(self.tau_star, n).tolist(),
            "trace": self.trace.to_dict(),
        }


def _soft_threshold(d: np.ndarray, tau0: np.ndarray, mu: float, lower: np.ndarray) -> np.ndarray:
    return np.maximum(lower, tau0 + np.sign(d) * np.maximum(np.abs(d) - mu, 0.0))


def project_travel(y: np.ndarray, tau0: np.ndarray, b: float,
                   lower: Optional[np.ndarray] = None) -> np.ndarray:
    """Euclidean projection onto {tau >= lower, ||tau - tau0||_1 <= b}, for 0 <= lower <= tau0"""
    y = np.asarray(y, dtype=float)
    tau0 = np.asarray(tau0, dtype=float)
    lower = np.zeros_like(tau0) if lower is None else np.asarray(lower, dtype=float)
    d = y - tau0
    if np.all(y >= lower) and np.abs(d).sum() <= b:
        return y.copy()
    if b <= 0:
        return tau0.copy()
    clipped = np.maximum(y, lower)
    if np.abs(clipped - tau0).sum() <= b:
        return clipped

    # g(mu) = ||tau(mu) - tau0||_1 - b is nonincreasing; g(0) > 0 and g(max|d|) = -b
    lo, hi = 0.0, float(np.max(np.abs(d)))
    best = tau0.copy()
    for _ in range(PROJECTION_MAX_ITER):
        mu = 0.5 * (lo + hi)
        candidate = _soft_threshold(d, tau0, mu, lower)
        gap = np.abs(candidate - tau0).sum() - b
        if gap > 0:
            lo = mu
        else:
            best, hi = candidate, mu
            if gap >= -PROJECTION_TOL:
                break
    return best


def projected_gradient_residual(tau: np.ndarray, grad: np.ndarray, tau0: np.ndarray,
                                b: float, lower: Optional[np.ndarray] = None) -> float:
    return float(np.linalg.norm(tau - project_travel(tau - grad, tau0, b, lower)))


class _Objective:
    """lambda_max(M(t0, tau)) and its gradient, with connectivity checked on every evaluation"""

    def __init__(self, net: NetworkSpec, s0: np.ndarray, p: EpidemicParams,
                 mask: Optional[np.ndarray]):
        self.net = net
        self.s0 = np.asarray(s0, dtype=float)
        self.p = p
        self.free = None if mask is None else ~np.asarray(mask, dtype=bool).reshape(-1)
        self.evaluations = 0

    def __call__(self, tau_vec: np.ndarray) -> Tuple[float, np.ndarray]:
        self.evaluations += 1
        flow = infection_flow(unvec(tau_vec, self.net.n), self.net.populations)
        if not check_strong_connectivity(flow):
            raise ConnectivityError("infection-flow matrix lost strong connectivity")
        M = assemble_travel_matrix(self.s0, tau_vec, self.p, self.net.populations)
        eig = dominant_eigenpair(M)
        grad = grad_lambda_travel(self.net, self.s0, self.p, tau_vec, eig=eig)
        if self.free is not None:
            grad = np.where(self.free, grad, 0.0)
        return eig.lam, grad


def optimize_travel(net: NetworkSpec, s0: np.ndarray, p: EpidemicParams,
                    opts: TravelSolveOptions) -> TravelSolution:
    """Projected gradient descent on lambda_max over the l1 ball around the current travel rates"""
    tau0 = net.tau_vec
    b = opts.budget
    if opts.mask is not None and np.asarray(opts.mask).size != tau0.size:
        raise ConfigError(f"travel mask has {np.asarray(opts.mask).size} entries, expected {tau0.size}")

    lower = opts.lower_bound(tau0)
    tau = tau0.copy() if opts.start is None else np.asarray(opts.start, dtype=float).copy()
    if np.any(tau < lower - FEASIBILITY_SLACK) or np.abs(tau - tau0).sum() > b + FEASIBILITY_SLACK:
        raise ConfigError("warm start lies outside the feasible travel set")
    if opts.mask is not None:
        frozen = np.asarray(opts.mask, dtype=bool).reshape(-1)
        tau[frozen] = tau0[frozen]

    objective = _Objective(net, s0, p, opts.mask)
    try:
        f, grad = objective(tau)
    except SolverError as exc:
        raise exc.with_stage("travel-opt iterate 0")

    trace = SolveTrace()
    residual = projected_gradient_residual(tau, grad, tau0, b, lower)
    trace.record(f, 0.0, np.linalg.norm(grad), residual)
    trace.distances.append(float(np.abs(tau - tau0).sum()))

    if b == 0:
        trace.converged = True
        trace.message = "zero budget"
        return TravelSolution(tau_star=tau0.copy(), f_star=f, budget=b, trace=trace)

    for k in range(1, opts.max_iters + 1):
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm <= opts.grad_tol or residual <= opts.grad_tol:
            trace.converged = True
            trace.message = "gradient tolerance reached"
            break

        gamma = 1.0
        while True:
            if gamma < opts.min_step:
                if residual <= STATIONARITY_TOL:
                    trace.converged = True
                    trace.message = "line search stalled at a stationary point"
                    break
                raise ConvergenceError(
                    f"backtracking exhausted at iterate {k} (residual {residual:.3e})",
                    stage="travel-opt")
            trial = project_travel(tau - gamma * grad, tau0, b, lower)
            try:
                f_trial, grad_trial = objective(trial)
            except (ConnectivityError, ConvergenceError) as exc:
                logger.debug(f"iterate {k}: rejected step gamma={gamma:.3e} ({exc.message})")
                gamma *= opts.beta_bt
                continue
            step = trial - tau
            model = f + grad @ step + (step @ step) / (2.0 * gamma)
            if f_trial > model + 1e-15 * max(1.0, abs(f)):
                gamma *= opts.beta_bt
            elif f_trial > f:
                gamma *= 0.5
            else:
                break
        if trace.converged:
            break

        step_norm = float(np.linalg.norm(trial - tau))
        tau, f, grad = trial, f_trial, grad_trial
        residual = projected_gradient_residual(tau, grad, tau0, b, lower)
        trace.record(f, gamma, np.linalg.norm(grad), residual)
        trace.distances.append(float(np.abs(tau - tau0).sum()))
        trace.iterations = k
        logger.debug(f"iterate {k}: f={f:.10g} gamma={gamma:.3e} step={step_norm:.3e}")
        if step_norm <= opts.step_tol:
            if residual <= STATIONARITY_TOL:
                trace.converged = True
                trace.message = "step tolerance reached"
                break
            logger.debug(f"iterate {k}: step below tolerance with residual {residual:.3e}")
    else:
        trace.message = f"stopped after {opts.max_iters} iterations"

    row_sums = unvec(tau, net.n).sum(axis=1)
    if np.any(row_sums > 1.0):
        logger.warning(f"budget {b:g}: optimized travel rates exceed a full day at node(s) "
                       f"{[net._label(i) for i in np.flatnonzero(row_sums > 1.0)]}")
    logger.info(f"budget {b:g}: f*={f:.8g} after {trace.iterations} iterations "
                f"({objective.evaluations} evaluations, {trace.message})")
    return TravelSolution(tau_star=tau, f_star=f, budget=b, trace=trace)


def solve_budgets(net: NetworkSpec, s0: np.ndarray, p: EpidemicParams, budgets: Sequence[float],
                  opts: Optional[TravelSolveOptions] = None,
                  max_workers: Optional[int] = None) -> Dict[float, TravelSolution]:
    """Solve every budget concurrently, then enforce f* nonincreasing in b by warm starts"""
    budgets = [float(b) for b in budgets]
    if any(later < earlier for earlier, later in zip(budgets, budgets[1:])):
        raise ConfigError(f"budgets must be sorted ascending, got {budgets}")
    opts = opts or TravelSolveOptions()

    solutions: Dict[float, TravelSolution] = {}
    with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as executor:
        future_to_budget = {
            executor.submit(optimize_travel, net, s0, p, replace(opts, budget=b)): b
            for b in dict.fromkeys(budgets)
        }
        for future in concurrent.futures.as_completed(future_to_budget):
            b = future_to_budget[future]
            solutions[b] = future.result()

    ordered = list(dict.fromkeys(budgets))
    for previous, b in zip(ordered, ordered[1:]):
        best = solutions[previous]
        if solutions[b].f_star <= best.f_star:
            continue
        logger.info(f"budget {b:g}: re-solving from the budget {previous:g} optimum")
        warm = optimize_travel(net, s0, p, replace(opts, budget=b, start=best.tau_star))
        if warm.f_star > best.f_star:
            warm = TravelSolution(tau_star=best.tau_star.copy(), f_star=best.f_star,
                                  budget=b, trace=warm.trace)
        solutions[b] = warm
    return solutions


def budget_sweep(net: NetworkSpec, s0: np.ndarray, p: EpidemicParams, budgets: Sequence[float],
                 opts: Optional[TravelSolveOptions] = None,
                 max_workers: Optional[int] = None) -> List[Tuple[float, float]]:
    solutions = solve_budgets(net, s0, p, budgets, opts, max_workers)
    return [(float(b), solutions[float(b)].f_star) for b in budgets]
