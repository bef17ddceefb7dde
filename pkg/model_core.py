#!/usr/bin/env python3
"""
Shared domain types for the networked epidemic model and assembly of the
linearized infection matrices.

Conventions used across the project:
    - travel rates tau are n x n, flattened column-major (numpy order='F')
      whenever they are treated as a vector;
    - quarantine rates are stacked as q = (q_a, q_s), length 2n;
    - the state of each node is the fractions (s, x_a, x_s, k, h).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from errors import ConfigError, DataError

ETA_DEFAULT = 0.6754
EPSILON_DEFAULT = 0.32
RECOVERY_DEFAULT = 0.2
HALVING_DAYS_DEFAULT = 30.0
ALPHA_DEFAULT = math.log(2.0) / HALVING_DAYS_DEFAULT

FLOW_REL_TOL = 1e-12
STATE_SUM_TOL = 1e-9


def vec(tau: np.ndarray) -> np.ndarray:
    """Column-major flattening of a travel-rate matrix"""
    return np.asarray(tau, dtype=float).flatten(order="F")


def unvec(tau_vec: np.ndarray, n: Optional[int] = None) -> np.ndarray:
    tau_vec = np.asarray(tau_vec, dtype=float)
    if n is None:
        n = int(round(math.sqrt(tau_vec.size)))
    if n * n != tau_vec.size:
        raise ValueError(f"travel vector of length {tau_vec.size} is not a square matrix")
    return tau_vec.reshape((n, n), order="F")


def infection_flow(tau: np.ndarray, populations: np.ndarray) -> np.ndarray:
    """
    Infection-flow matrix A with a_ij = sum_l tau_il tau_jl N_j / S_l,
    S_l = sum_k N_k tau_kl. Unvisited locations (S_l = 0) contribute nothing.
    """
    tau = np.asarray(tau, dtype=float)
    populations = np.asarray(populations, dtype=float)
    visitors = populations @ tau
    visited = visitors > 0
    if not np.any(visited):
        return np.zeros_like(tau)
    weighted = tau[:, visited] / visitors[visited]
    return (weighted @ tau[:, visited].T) * populations[np.newaxis, :]


@dataclass(frozen=True)
class EpidemicParams:
    """Transmission, recovery and quarantine-recovery rates (per day) and decay target"""
    beta_a: float
    beta_s: float
    epsilon: float = EPSILON_DEFAULT
    r_a: float = RECOVERY_DEFAULT
    r_s: float = RECOVERY_DEFAULT
    r_q: float = RECOVERY_DEFAULT
    alpha: float = ALPHA_DEFAULT

    @classmethod
    def from_beta_s(cls, beta_s: float, eta: float = ETA_DEFAULT, **rates) -> "EpidemicParams":
        return cls(beta_a=eta * beta_s, beta_s=beta_s, **rates)

    def with_betas(self, beta_a: float, beta_s: float) -> "EpidemicParams":
        return replace(self, beta_a=beta_a, beta_s=beta_s)

    def violations(self) -> List[str]:
        problems = []
        for name in ("beta_a", "beta_s", "epsilon", "r_a", "r_s", "r_q", "alpha"):
            value = getattr(self, name)
            if not np.isfinite(value):
                problems.append(f"{name} is not finite")
            elif value < 0:
                problems.append(f"{name} nonnegativity violated ({value:g})")
        if self.beta_a > self.beta_s:
            problems.append(
                f"beta_a ({self.beta_a:g}) exceeds beta_s ({self.beta_s:g}); "
                "asymptomatic spread must not exceed symptomatic spread"
            )
        return problems

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in
                ("beta_a", "beta_s", "epsilon", "r_a", "r_s", "r_q", "alpha")}


@dataclass(frozen=True)
class NetworkSpec:
    populations: np.ndarray
    tau: np.ndarray
    flow: np.ndarray
    nodes: Sequence[str] = ()

    @classmethod
    def from_tau(cls, tau: np.ndarray, populations: np.ndarray,
                 nodes: Sequence[str] = ()) -> "NetworkSpec":
        tau = np.array(tau, dtype=float)
        populations = np.array(populations, dtype=float)
        return cls(populations=populations, tau=tau,
                   flow=infection_flow(tau, populations), nodes=tuple(nodes))

    @property
    def n(self) -> int:
        return int(self.populations.size)

    @property
    def tau_vec(self) -> np.ndarray:
        return vec(self.tau)

    def with_tau(self, tau: np.ndarray) -> "NetworkSpec":
        return NetworkSpec.from_tau(tau, self.populations, self.nodes)

    def violations(self) -> List[str]:
        n = self.n
        problems = []
        if self.tau.shape != (n, n) or self.flow.shape != (n, n):
            return [f"dimension mismatch: {n} populations, tau {self.tau.shape}, flow {self.flow.shape}"]
        if self.nodes and len(self.nodes) != n:
            problems.append(f"{len(self.nodes)} node ids for {n} populations")
        for i in np.flatnonzero(~(self.populations > 0)):
            problems.append(f"population of node {self._label(i)} must be positive")
        if np.any(self.tau < 0):
            problems.append("tau nonnegativity violated")
        for i, total in enumerate(self.tau.sum(axis=1)):
            if total > 1.0 + 1e-12:
                problems.append(f"tau row {self._label(i)} sums to {total:g} (row-sum bound 1)")
        if np.any(self.flow < 0):
            problems.append("flow nonnegativity violated")
        if not problems:
            expected = infection_flow(self.tau, self.populations)
            scale = max(np.max(np.abs(expected)), 1e-300)
            if np.max(np.abs(expected - self.flow)) > FLOW_REL_TOL * scale:
                problems.append("flow inconsistent with tau and populations")
        return problems

    def _label(self, i: int) -> str:
        return str(self.nodes[i]) if self.nodes else str(i)


@dataclass(frozen=True)
class CompartmentState:
    """Per-node fractions at time t; k is identically zero for the base model"""
    s: np.ndarray
    x_a: np.ndarray
    x_s: np.ndarray
    k: np.ndarray
    h: np.ndarray
    t: float = 0.0

    COMPARTMENTS = ("s", "x_a", "x_s", "k", "h")

    @classmethod
    def from_array(cls, values: np.ndarray, t: float = 0.0) -> "CompartmentState":
        values = np.asarray(values, dtype=float)
        return cls(*(values[i].copy() for i in range(5)), t=t)

    def as_array(self) -> np.ndarray:
        return np.vstack([self.s, self.x_a, self.x_s, self.k, self.h])

    @property
    def n(self) -> int:
        return int(np.size(self.s))

    @property
    def active(self) -> np.ndarray:
        return self.x_a + self.x_s

    def violations(self, tol: float = STATE_SUM_TOL) -> List[str]:
        values = self.as_array()
        problems = []
        if np.any(values < -tol) or np.any(values > 1 + tol):
            problems.append(f"compartment outside [0, 1] at t={self.t:g}")
        drift = np.max(np.abs(values.sum(axis=0) - 1.0))
        if drift > tol:
            problems.append(f"compartments sum to 1 +/- {drift:.3e} at t={self.t:g}")
        return problems


@dataclass(frozen=True)
class PolicyVector:
    """Quarantine rates (q_a, q_s) or a vectorized travel-rate policy"""
    q_a: Optional[np.ndarray] = None
    q_s: Optional[np.ndarray] = None
    tau_vec: Optional[np.ndarray] = None

    @classmethod
    def quarantine(cls, q: np.ndarray) -> "PolicyVector":
        q = np.asarray(q, dtype=float)
        if q.ndim != 1 or q.size % 2:
            raise ValueError(f"stacked quarantine vector must have even length, got {q.shape}")
        n = q.size // 2
        return cls(q_a=q[:n].copy(), q_s=q[n:].copy())

    @classmethod
    def none(cls, n: int) -> "PolicyVector":
        return cls(q_a=np.zeros(n), q_s=np.zeros(n))

    @property
    def is_quarantine(self) -> bool:
        return self.q_a is not None

    @property
    def q(self) -> np.ndarray:
        if not self.is_quarantine:
            raise ValueError("policy carries travel rates, not quarantine rates")
        return np.concatenate([self.q_a, self.q_s])

    def violations(self) -> List[str]:
        problems = []
        if self.is_quarantine:
            q = self.q
            if np.any(q < 0) or np.any(q > 1):
                problems.append("quarantine rates must lie in [0, 1]")
        if self.tau_vec is not None and np.any(np.asarray(self.tau_vec) < 0):
            problems.append("travel rates must be nonnegative")
        return problems


@dataclass(frozen=True)
class EconomicCosts:
    """Relative per-node quarantine costs, strictly positive"""
    z_a: np.ndarray
    z_s: np.ndarray

    def __post_init__(self):
        if np.shape(self.z_a) != np.shape(self.z_s):
            raise DataError("z_a and z_s must have the same length")
        if not (np.all(np.asarray(self.z_a) > 0) and np.all(np.asarray(self.z_s) > 0)):
            raise DataError("economic costs must be strictly positive")

    @classmethod
    def from_gdp(cls, gdp: np.ndarray) -> "EconomicCosts":
        gdp = np.asarray(gdp, dtype=float)
        if gdp.size == 0 or not np.all(gdp > 0):
            raise DataError("GDP values must be strictly positive")
        z = gdp / gdp.max()
        return cls(z_a=z.copy(), z_s=z.copy())

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.z_a, self.z_s])


@dataclass
class SolveTrace:
    """Per-iterate diagnostics of an optimizer run"""
    objective: List[float] = field(default_factory=list)
    step_sizes: List[float] = field(default_factory=list)
    grad_norms: List[float] = field(default_factory=list)
    residuals: List[float] = field(default_factory=list)
    times: List[float] = field(default_factory=list)
    distances: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    message: str = ""

    def record(self, objective: float, step: float, grad_norm: float,
               residual: float = float("nan")):
        self.objective.append(float(objective))
        self.step_sizes.append(float(step))
        self.grad_norms.append(float(grad_norm))
        self.residuals.append(float(residual))

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "message": self.message,
            "objective": self.objective,
            "step_sizes": self.step_sizes,
            "grad_norms": self.grad_norms,
            "residuals": self.residuals,
            "times": self.times,
            "distances": self.distances,
        }


@dataclass
class ValidationReport:
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def __contains__(self, fragment: str) -> bool:
        return any(fragment in violation for violation in self.violations)

    def raise_if_invalid(self, stage: str = "validate"):
        if self.violations:
            raise ConfigError("; ".join(self.violations), stage=stage)


def validate_params(p: EpidemicParams, net: NetworkSpec) -> ValidationReport:
    """List every violated invariant of the parameters and the network; never raises"""
    return ValidationReport(p.violations() + net.violations())


def _infection_blocks(s0: np.ndarray, flow: np.ndarray, p: EpidemicParams) -> np.ndarray:
    s0 = np.asarray(s0, dtype=float)
    flow = np.asarray(flow, dtype=float)
    n = s0.size
    if flow.shape != (n, n):
        raise ValueError(f"dimension mismatch: s0 has {n} nodes, flow is {flow.shape}")
    contact = s0[:, np.newaxis] * flow
    eye = np.eye(n)
    return np.block([
        [p.beta_a * contact - (p.epsilon + p.r_a) * eye, p.beta_s * contact],
        [p.epsilon * eye, -p.r_s * eye],
    ])


def assemble_travel_matrix(s0: np.ndarray, tau_vec: np.ndarray, p: EpidemicParams,
                           populations: np.ndarray) -> np.ndarray:
    """Linearized infection matrix M(t0, tau) for vectorized travel rates"""
    populations = np.asarray(populations, dtype=float)
    tau = unvec(tau_vec)
    if tau.shape[0] != populations.size:
        raise ValueError(
            f"dimension mismatch: {tau.shape[0]} travel nodes, {populations.size} populations")
    return _infection_blocks(s0, infection_flow(tau, populations), p)


def assemble_quarantine_matrix(s0: np.ndarray, flow: np.ndarray, p: EpidemicParams,
                               q) -> np.ndarray:
    """Linearized SIQR matrix M(t0, q) = M(t0, 0) - diag(q)"""
    base = _infection_blocks(s0, flow, p)
    q = q.q if isinstance(q, PolicyVector) else np.asarray(q, dtype=float)
    if q.shape != (base.shape[0],):
        raise ValueError(f"dimension mismatch: q has shape {q.shape}, expected ({base.shape[0]},)")
    return base - np.diag(q)


def base_matrix(s0: np.ndarray, flow: np.ndarray, p: EpidemicParams) -> np.ndarray:
    """M(t0, q=0) for a fixed infection-flow matrix"""
    return _infection_blocks(s0, flow, p)
