#!/usr/bin/env python3
"""
Quarantine-rate optimization.

Minimizes the economic cost sum_i z_i / (1 - q_i) subject to the dominant
eigenvalue of M(t0, q) = M(t0, 0) - diag(q) staying at or below -alpha.

The exact solver substitutes w = 1 - q, which turns the constraint into
lambda_max(B0 + diag(w)) <= 0 with B0 = M(t0, 0) - (1 - alpha) I. The optimum
then follows from diagonally balancing diag(z)(-B0^-1). An augmented
primal-dual gradient flow, integrated with forward Euler, solves the same
problem independently and serves as a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg

from errors import (ConnectivityError, ConvergenceError, DomainError, InfeasibleError,
                    SolverError)
from log_setup import get_logger
from mobility import check_strong_connectivity
from model_core import (EconomicCosts, EpidemicParams, PolicyVector, SolveTrace,
                        assemble_quarantine_matrix, base_matrix)
from spectral import dominant_eigenpair, grad_lambda_quarantine, is_irreducible

logger = get_logger(__name__)

BALANCE_TOL = 1e-9
BALANCE_MAX_SWEEPS = 1_000_000
NONNEG_SLACK = 1e-12
ACTIVE_TOL = 1e-6
CONSTRAINT_TOL = 1e-6

PDGD_RHO = 1.0
PDGD_STEP = 1e-3
PDGD_MAX_STEPS = 10_000_000
PDGD_MARGIN = 1e-6
PDGD_DIVERGENCE = 1e6
PDGD_FLIP_LIMIT = 50


def _as_q(q) -> np.ndarray:
    return q.q if isinstance(q, PolicyVector) else np.asarray(q, dtype=float)


def _as_z(z) -> np.ndarray:
    return z.z if isinstance(z, EconomicCosts) else np.asarray(z, dtype=float)


def quarantine_cost(q, z) -> float:
    q, z = _as_q(q), _as_z(z)
    if np.any(q >= 1):
        raise DomainError(f"cost has a pole at q = 1 (index {int(np.argmax(q >= 1))})")
    return float(np.sum(z / (1.0 - q)))


def grad_cost(q, z) -> np.ndarray:
    q, z = _as_q(q), _as_z(z)
    if np.any(q >= 1):
        raise DomainError(f"cost gradient has a pole at q = 1 (index {int(np.argmax(q >= 1))})")
    return z / (1.0 - q) ** 2


@dataclass
class FeasibilityReport:
    alpha: float
    alpha_bound_rate: float
    alpha_bound_spectral: float
    assumption1_holds: bool
    m: float
    x: float
    strongly_connected: bool
    susceptible_positive: bool
    reasons: List[str] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.reasons

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "alpha_bound_rate": self.alpha_bound_rate,
            "alpha_bound_spectral": self.alpha_bound_spectral,
            "assumption1_holds": self.assumption1_holds,
            "m": self.m,
            "x": self.x,
            "strongly_connected": self.strongly_connected,
            "susceptible_positive": self.susceptible_positive,
            "feasible": self.feasible,
            "reasons": list(self.reasons),
            "notes": list(self.notes),
        }


def feasibility_check(s0: np.ndarray, flow: np.ndarray, p: EpidemicParams,
                      alpha: float) -> FeasibilityReport:
    """Report every condition the balancing reduction needs; never raises

    Assumption 1 (1 + x/m^2 >= m) only guarantees a nonnegative balanced
    solution, so it is reported as a note. optimal_quarantine checks the
    solution itself.
    """
    s0 = np.asarray(s0, dtype=float)
    flow = np.asarray(flow, dtype=float)
    reasons, notes = [], []

    contact_diag = p.beta_a * s0 * np.diag(flow)
    bound_rate = min(p.r_s + 1.0, p.epsilon + p.r_a + 1.0 - float(np.max(contact_diag)))

    connected = bool(check_strong_connectivity(flow))
    if not connected:
        reasons.append("infection-flow matrix is not strongly connected")
    positive = bool(np.all(s0 > 0))
    if not positive:
        reasons.append("susceptible fraction must be positive at every node")

    M0 = base_matrix(s0, flow, p)
    C0 = M0 - np.eye(M0.shape[0])
    try:
        bound_spectral = -dominant_eigenpair(C0).lam
    except SolverError as exc:
        bound_spectral = float("nan")
        reasons.append(f"lambda_max(C0) unavailable: {exc.message}")

    if not alpha >= 0:
        reasons.append(f"alpha must be nonnegative, got {alpha:g}")
    if not alpha < bound_rate:
        reasons.append(f"alpha {alpha:g} violates the diagonal bound {bound_rate:g}")
    if np.isfinite(bound_spectral) and not alpha < bound_spectral:
        reasons.append(f"alpha {alpha:g} violates the spectral bound -lambda_max(C0) = {bound_spectral:g}")

    B0_diag = np.diag(C0) + alpha
    m = float(np.max(np.abs(B0_diag)))
    x = float(np.min(p.epsilon * p.beta_s * s0 * np.diag(flow)))
    holds = bool(m > 0 and 1.0 + x / m ** 2 >= m)
    if not holds:
        notes.append(f"assumption 1 fails: 1 + x/m^2 = {1.0 + x / m ** 2 if m > 0 else float('nan'):g} < m = {m:g}; "
                     "nonnegativity of the balanced solution is checked directly")

    return FeasibilityReport(alpha=float(alpha), alpha_bound_rate=float(bound_rate),
                             alpha_bound_spectral=float(bound_spectral), assumption1_holds=holds,
                             m=m, x=x, strongly_connected=connected, susceptible_positive=positive,
                             reasons=reasons, notes=notes)


def build_B0(s0: np.ndarray, flow: np.ndarray, p: EpidemicParams, alpha: float) -> np.ndarray:
    """B0 = M(t0, 0) - (1 - alpha) I, checked Hurwitz"""
    M0 = base_matrix(s0, flow, p)
    B0 = M0 - (1.0 - alpha) * np.eye(M0.shape[0])
    lam = dominant_eigenpair(B0).lam
    if lam >= 0:
        raise InfeasibleError(f"B0 is not Hurwitz (lambda_max = {lam:g}); alpha = {alpha:g} too large",
                              stage="quarantine-opt")
    return B0


def neg_inverse(B0: np.ndarray) -> np.ndarray:
    """-B0^-1 by LU with one refinement step; nonnegative for Hurwitz Metzler B0"""
    n = B0.shape[0]
    eye = np.eye(n)
    try:
        lu = scipy.linalg.lu_factor(B0)
    except (ValueError, scipy.linalg.LinAlgError) as exc:
        raise SolverError(f"LU factorization of B0 failed: {exc}") from exc
    X = scipy.linalg.lu_solve(lu, -eye)
    X += scipy.linalg.lu_solve(lu, -eye - B0 @ X)
    floor = -NONNEG_SLACK * max(1.0, float(np.max(np.abs(X))))
    if np.min(X) < floor:
        i, j = np.unravel_index(np.argmin(X), X.shape)
        raise InfeasibleError(f"-B0^-1 has a negative entry {X[i, j]:.3e} at ({i}, {j})")
    return np.maximum(X, 0.0)


@dataclass(frozen=True)
class BalanceResult:
    d_star: np.ndarray
    imbalance: float
    iterations: int


def _imbalance(off: np.ndarray, d: np.ndarray) -> float:
    scaled = off * d[np.newaxis, :] / d[:, np.newaxis]
    rows, cols = scaled.sum(axis=1), scaled.sum(axis=0)
    total = rows + cols
    mask = total > 0
    return float(np.max(np.abs(rows - cols)[mask] / total[mask])) if np.any(mask) else 0.0


def balance(Mat: np.ndarray, tol: float = BALANCE_TOL,
            max_iter: int = BALANCE_MAX_SWEEPS) -> BalanceResult:
    """
    Osborne iteration: find d > 0 so D^-1 Mat D has equal off-diagonal row and
    column sums, normalized to d[0] = 1.
    """
    Mat = np.asarray(Mat, dtype=float)
    off = Mat - np.diag(np.diag(Mat))
    if np.any(off < 0):
        raise ValueError("balancing needs nonnegative off-diagonal entries")
    if not is_irreducible(Mat):
        raise ConnectivityError("cannot balance a reducible matrix")

    n = Mat.shape[0]
    d = np.ones(n)
    imbalance = _imbalance(off, d)
    sweeps = 0
    while imbalance > tol:
        if sweeps >= max_iter:
            raise ConvergenceError(f"balancing stalled at imbalance {imbalance:.3e} after {sweeps} sweeps")
        for i in range(n):
            row = (off[i] @ d) / d[i]
            col = d[i] * (off[:, i] @ (1.0 / d))
            d[i] *= np.sqrt(row / col)
        sweeps += 1
        imbalance = _imbalance(off, d)
    logger.debug(f"balanced {n}x{n} matrix in {sweeps} sweeps (imbalance {imbalance:.2e})")
    return BalanceResult(d_star=d / d[0], imbalance=imbalance, iterations=sweeps)


@dataclass
class QuarantineSolution:
    policy: PolicyVector
    lambda_max: float
    cost: float
    feasibility: FeasibilityReport
    method: str = "balance"
    balance: Optional[BalanceResult] = None
    dual: Optional[np.ndarray] = None
    trace: Optional[SolveTrace] = None

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "q_a": self.policy.q_a.tolist(),
            "q_s": self.policy.q_s.tolist(),
            "lambda_max": self.lambda_max,
            "cost": self.cost,
            "feasibility": self.feasibility.to_dict(),
        }
        if self.balance is not None:
            out["balance"] = {"d_star": self.balance.d_star.tolist(),
                              "imbalance": self.balance.imbalance,
                              "iterations": self.balance.iterations}
        if self.dual is not None:
            out["dual"] = self.dual.tolist()
        if self.trace is not None:
            out["trace"] = self.trace.to_dict()
        return out


def optimal_quarantine(s0: np.ndarray, flow: np.ndarray, p: EpidemicParams, alpha: float,
                       z: EconomicCosts, balance_tol: float = BALANCE_TOL) -> QuarantineSolution:
    """Cost-minimal quarantine rates meeting lambda_max(M(t0, q)) <= -alpha, by balancing"""
    report = feasibility_check(s0, flow, p, alpha)
    if not report.feasible:
        raise InfeasibleError("; ".join(report.reasons), stage="quarantine-opt")

    B0 = build_B0(s0, flow, p, alpha)
    N = neg_inverse(B0)
    result = balance(np.diag(_as_z(z)) @ N, tol=balance_tol)
    d = result.d_star
    v = (N @ d) / d

    short = np.flatnonzero(v < 1.0 - 1e-9)
    if short.size:
        raise InfeasibleError(f"balanced scaling below 1 at index {int(short[0])} "
                              f"(v = {v[short[0]]:.6g}); the optimum would need a negative quarantine rate",
                              stage="quarantine-opt")
    q = np.clip(1.0 - 1.0 / v, 0.0, 1.0)
    policy = PolicyVector.quarantine(q)

    lam = dominant_eigenpair(assemble_quarantine_matrix(s0, flow, p, q)).lam
    if abs(lam + alpha) > CONSTRAINT_TOL:
        raise SolverError(f"constraint not active at the optimum: lambda_max = {lam:.9g}, "
                          f"target {-alpha:.9g}", stage="quarantine-opt")
    cost = quarantine_cost(q, z)
    logger.info(f"optimal quarantine: cost={cost:.6g}, lambda_max={lam:.8g} "
                f"({result.iterations} balancing sweeps)")
    return QuarantineSolution(policy=policy, lambda_max=lam, cost=cost, feasibility=report,
                              balance=result)


def constraint_values(q, s0: np.ndarray, flow: np.ndarray, p: EpidemicParams,
                      alpha: float) -> np.ndarray:
    """g(q) <= 0: [lambda_max + alpha, -q, q - 1], length 4n + 1"""
    q = _as_q(q)
    lam = dominant_eigenpair(assemble_quarantine_matrix(s0, flow, p, q)).lam
    return np.concatenate([[lam + alpha], -q, q - 1.0])


def constraint_jacobian(q, s0: np.ndarray, flow: np.ndarray, p: EpidemicParams) -> np.ndarray:
    q = _as_q(q)
    size = q.size
    grad_lam = grad_lambda_quarantine(assemble_quarantine_matrix(s0, flow, p, q))
    return np.vstack([grad_lam[np.newaxis, :], -np.eye(size), np.eye(size)])


def _constraints(q: np.ndarray, s0, flow, p, alpha) -> Tuple[np.ndarray, np.ndarray]:
    M = assemble_quarantine_matrix(s0, flow, p, q)
    eig = dominant_eigenpair(M)
    size = q.size
    g = np.concatenate([[eig.lam + alpha], -q, q - 1.0])
    J = np.vstack([grad_lambda_quarantine(M, eig)[np.newaxis, :], -np.eye(size), np.eye(size)])
    return g, J


def aug_lagrangian(q, lam: np.ndarray, rho: float, s0: np.ndarray, flow: np.ndarray,
                   p: EpidemicParams, alpha: float, z) -> float:
    q = _as_q(q)
    lam = np.asarray(lam, dtype=float)
    if rho <= 0:
        raise ValueError("penalty rho must be positive")
    g = constraint_values(q, s0, flow, p, alpha)
    hinge = np.maximum(rho * g + lam, 0.0)
    return quarantine_cost(q, z) + float(np.sum(hinge ** 2 - lam ** 2)) / (2.0 * rho)


@dataclass
class PdgdState:
    q: np.ndarray
    lam: np.ndarray
    rho: float = PDGD_RHO

    def __post_init__(self):
        if np.any(self.lam < 0):
            raise ValueError("dual variables must be nonnegative")
        if self.rho <= 0:
            raise ValueError("penalty rho must be positive")

    @property
    def y(self) -> np.ndarray:
        return np.concatenate([self.q, self.lam])


def _pdgd_velocity(state: PdgdState, s0, flow, p, alpha, z,
                   margin: float = PDGD_MARGIN) -> Tuple[np.ndarray, np.ndarray]:
    g, J = _constraints(state.q, s0, flow, p, alpha)
    hinge = np.maximum(state.rho * g + state.lam, 0.0)
    q_dot = -grad_cost(state.q, z) - J.T @ hinge
    # components pushing against the clamp do not move q
    blocked = ((state.q <= 0.0) & (q_dot < 0)) | ((state.q >= 1.0 - margin) & (q_dot > 0))
    q_dot[blocked] = 0.0
    lam_dot = (hinge - state.lam) / state.rho
    return q_dot, lam_dot


def solve_pdgd(q0, lambda0, rho: float = PDGD_RHO, step: float = PDGD_STEP,
               max_steps: int = PDGD_MAX_STEPS, s0=None, flow=None, p: EpidemicParams = None,
               alpha: float = 0.0, z=None, tol: float = 1e-9, log_every: int = 1000,
               margin: float = PDGD_MARGIN) -> Tuple[PolicyVector, np.ndarray, SolveTrace]:
    """Forward-Euler integration of the augmented primal-dual gradient dynamics"""
    q = np.clip(_as_q(q0).astype(float), 0.0, 1.0 - margin)
    size = q.size
    lam = np.zeros(2 * size + 1) if lambda0 is None else np.asarray(lambda0, dtype=float).copy()
    if lam.shape != (2 * size + 1,):
        raise ValueError(f"expected {2 * size + 1} dual variables, got {lam.shape}")
    if step > rho:
        logger.warning(f"Euler step {step:g} exceeds rho {rho:g}; duals may leave the orthant")
    state = PdgdState(q=q, lam=lam, rho=rho)

    trace = SolveTrace()
    snapshots = []
    previous_q_dot = None
    flips, flip_start = 0, 0.0
    clamped = False
    for k in range(max_steps + 1):
        q_dot, lam_dot = _pdgd_velocity(state, s0, flow, p, alpha, z, margin)
        speed = float(np.sqrt(q_dot @ q_dot + lam_dot @ lam_dot))
        if not np.isfinite(speed) or np.linalg.norm(q_dot) > PDGD_DIVERGENCE:
            raise ConvergenceError(f"primal-dual dynamics diverged at step {k} (|dq/dt| = {np.linalg.norm(q_dot):.3e})",
                                   stage="quarantine-opt")
        if k % log_every == 0 or speed <= tol or k == max_steps:
            snapshots.append(state.y.copy())
            trace.times.append(k * step)
            trace.record(quarantine_cost(state.q, z), step, speed)
        if speed <= tol:
            trace.converged = True
            trace.message = f"stationary after {k} steps"
            break
        if k == max_steps:
            trace.message = f"stopped after {max_steps} steps (speed {speed:.3e})"
            break

        if previous_q_dot is not None and q_dot @ previous_q_dot < 0:
            if flips == 0:
                flip_start = speed
            flips += 1
            if flips >= PDGD_FLIP_LIMIT and speed >= flip_start:
                raise ConvergenceError(f"oscillation detected at step {k}; reduce the Euler step {step:g}",
                                       stage="quarantine-opt")
        else:
            flips = 0
        previous_q_dot = q_dot

        raw = state.q + step * q_dot
        next_q = np.clip(raw, 0.0, 1.0 - margin)
        clamped = clamped or bool(np.any(raw > 1.0 - margin))
        state = PdgdState(q=next_q, lam=np.maximum(state.lam + step * lam_dot, 0.0), rho=rho)

    trace.iterations = k
    end = state.y
    trace.distances = [float(np.linalg.norm(y - end)) for y in snapshots]
    if clamped:
        logger.warning("primal clamp at 1 - margin was active during the run")
    logger.info(f"pdgd: {trace.message}; cost={trace.objective[-1]:.6g}")
    return PolicyVector.quarantine(state.q), state.lam, trace


def recover_duals(q, s0: np.ndarray, flow: np.ndarray, p: EpidemicParams, alpha: float, z,
                  active_tol: float = ACTIVE_TOL) -> np.ndarray:
    """Least-squares multipliers over the active constraints, zero elsewhere"""
    q = _as_q(q)
    g, J = _constraints(q, s0, flow, p, alpha)
    active = np.flatnonzero(np.abs(g) <= active_tol)
    duals = np.zeros(g.size)
    if active.size:
        solution, *_ = scipy.linalg.lstsq(J[active].T, -grad_cost(q, z))
        duals[active] = np.maximum(solution, 0.0)
    return duals


def kkt_residual(q, lam: np.ndarray, s0: np.ndarray, flow: np.ndarray, p: EpidemicParams,
                 alpha: float, z) -> float:
    """Max-norm of grad f + J^T lambda"""
    q = _as_q(q)
    J = constraint_jacobian(q, s0, flow, p)
    return float(np.max(np.abs(grad_cost(q, z) + J.T @ np.asarray(lam, dtype=float))))


def pdgd_quarantine(s0: np.ndarray, flow: np.ndarray, p: EpidemicParams, alpha: float,
                    z: EconomicCosts, rho: float = PDGD_RHO, step: float = PDGD_STEP,
                    max_steps: int = PDGD_MAX_STEPS, tol: float = 1e-9) -> QuarantineSolution:
    """Quarantine rates from the primal-dual dynamics started at q = 0, lambda = 0"""
    report = feasibility_check(s0, flow, p, alpha)
    if not report.feasible:
        raise InfeasibleError("; ".join(report.reasons), stage="quarantine-opt")
    size = 2 * np.asarray(s0).size
    policy, dual, trace = solve_pdgd(np.zeros(size), None, rho, step, max_steps, s0, flow, p,
                                     alpha, z, tol=tol)
    lam = dominant_eigenpair(assemble_quarantine_matrix(s0, flow, p, policy)).lam
    return QuarantineSolution(policy=policy, lambda_max=lam, cost=quarantine_cost(policy, z),
                              feasibility=report, method="pdgd", dual=dual, trace=trace)
