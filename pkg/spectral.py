#!/usr/bin/env python3
"""
Dominant eigenpairs of Metzler matrices and the quantities derived from them:
eigenvalue gradients with respect to travel and quarantine rates, the basic
reproduction number, and stability certificates.

The dominant eigenpair comes from a shifted power iteration on M + sigma*I with
sigma = max|M_ii| + 1, which is nonnegative with a positive diagonal and hence
primitive when M is irreducible. The normalized shifted matrix is squared
repeatedly first, so a handful of matrix products stand in for the long tail of
plain power steps; plain steps then confirm the residual.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components

from errors import ConnectivityError, ConvergenceError, SolverError
from log_setup import get_logger
from model_core import (EpidemicParams, NetworkSpec, PolicyVector, assemble_quarantine_matrix,
                        assemble_travel_matrix, unvec)

logger = get_logger(__name__)

RESIDUAL_TOL = 1e-12
MAX_ITERATIONS = 100_000
MAX_SQUARINGS = 64


@dataclass(frozen=True)
class EigenTriple:
    lam: float
    u: np.ndarray
    v: np.ndarray
    iterations: int = 0

    @property
    def overlap(self) -> float:
        return float(self.v @ self.u)


def is_metzler(M: np.ndarray) -> bool:
    off = M - np.diag(np.diag(M))
    return bool(np.all(off >= 0))


def is_irreducible(M: np.ndarray) -> bool:
    n = M.shape[0]
    if n == 1:
        return True
    pattern = (M - np.diag(np.diag(M))) > 0
    count, _ = connected_components(pattern, directed=True, connection="strong")
    return count == 1


def _perron_vector(M: np.ndarray, tol: float, max_iter: int):
    n = M.shape[0]
    sigma = np.max(np.abs(np.diag(M))) + 1.0
    shifted = M + sigma * np.eye(n)
    scale = max(1.0, np.max(np.abs(M)))

    power = shifted / np.max(shifted)
    squarings = 0
    for squarings in range(1, MAX_SQUARINGS + 1):
        squared = power @ power
        squared /= np.max(squared)
        settled = np.max(np.abs(squared - power)) <= 1e-15
        power = squared
        if settled:
            break

    x = power @ np.ones(n)
    x /= np.linalg.norm(x)
    for iteration in range(max_iter):
        y = M @ x
        rayleigh = x @ y
        residual = np.linalg.norm(y - rayleigh * x)
        if residual <= tol * scale:
            return x, squarings + iteration
        x = shifted @ x
        x /= np.linalg.norm(x)
    raise ConvergenceError(
        f"power iteration stalled at residual {residual:.3e} after {max_iter} steps")


def dominant_eigenpair(M: np.ndarray, tol: float = RESIDUAL_TOL,
                       max_iter: int = MAX_ITERATIONS) -> EigenTriple:
    """Rightmost eigenvalue of an irreducible Metzler matrix with positive unit eigenvectors"""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise SolverError("matrix has non-finite entries")
    if not is_metzler(M):
        raise SolverError("matrix has negative off-diagonal entries (not Metzler)")
    if not is_irreducible(M):
        raise ConnectivityError("matrix digraph is not strongly connected")

    if M.shape[0] == 1:
        one = np.ones(1)
        return EigenTriple(lam=float(M[0, 0]), u=one, v=one.copy())

    u, right_steps = _perron_vector(M, tol, max_iter)
    v, left_steps = _perron_vector(M.T, tol, max_iter)
    lam = float(v @ (M @ u)) / float(v @ u)
    return EigenTriple(lam=lam, u=u, v=v, iterations=right_steps + left_steps)


def lambda_max(M: np.ndarray) -> float:
    return dominant_eigenpair(M).lam


def _travel_sensitivity(tau: np.ndarray, populations: np.ndarray, left: np.ndarray,
                        right: np.ndarray) -> np.ndarray:
    """
    Matrix G with G_ij = sum_pq left_p right_q d a_pq / d tau_ij, using
    d a_pq / d tau_ij = (delta_pi tau_qj + delta_qi tau_pj) N_q / S_j
                        - tau_pj tau_qj N_q N_i / S_j**2.
    """
    visitors = populations @ tau
    visited = visitors > 0
    inv_s = np.zeros_like(visitors)
    inv_s[visited] = 1.0 / visitors[visited]

    b = (tau.T @ left) * inv_s
    c = (tau.T @ (right * populations)) * inv_s
    G = (np.outer(left, c)
         + np.outer(right * populations, b)
         - np.outer(populations, b * c))
    G[:, ~visited] = 0.0
    return G


def grad_lambda_travel(net: NetworkSpec, s0: np.ndarray, p: EpidemicParams,
                       tau_vec: Optional[np.ndarray] = None,
                       eig: Optional[EigenTriple] = None) -> np.ndarray:
    """Gradient of lambda_max(M(t0, tau)) over the column-major travel vector"""
    tau_vec = net.tau_vec if tau_vec is None else np.asarray(tau_vec, dtype=float)
    s0 = np.asarray(s0, dtype=float)
    n = net.n
    if p.beta_a == 0 and p.beta_s == 0:
        # M does not depend on tau
        return np.zeros(n * n)
    if eig is None:
        eig = dominant_eigenpair(assemble_travel_matrix(s0, tau_vec, p, net.populations))

    u_a, u_s = eig.u[:n], eig.u[n:]
    v_a = eig.v[:n]
    left = s0 * v_a
    right = p.beta_a * u_a + p.beta_s * u_s
    G = _travel_sensitivity(unvec(tau_vec, n), net.populations, left, right)
    return G.flatten(order="F") / eig.overlap


def grad_lambda_quarantine(M: np.ndarray, eig: Optional[EigenTriple] = None) -> np.ndarray:
    """Gradient of lambda_max(M(t0, q)) over q; dM/dq_i = -e_i e_i^T"""
    if eig is None:
        eig = dominant_eigenpair(M)
    return -(eig.v * eig.u) / eig.overlap


def next_generation_split(s0: np.ndarray, flow: np.ndarray, p: EpidemicParams, q=None):
    """New-infection part F and transition part V with M(t0, q) = F + V"""
    s0 = np.asarray(s0, dtype=float)
    n = s0.size
    if q is None:
        q = np.zeros(2 * n)
    M = assemble_quarantine_matrix(s0, flow, p, q)
    contact = s0[:, np.newaxis] * np.asarray(flow, dtype=float)
    zeros = np.zeros((n, n))
    F = np.block([[p.beta_a * contact, p.beta_s * contact], [zeros, zeros]])
    return F, M - F


def reproduction_number(s0: np.ndarray, flow: np.ndarray, p: EpidemicParams, q=None) -> float:
    """Spectral radius of -F V^{-1}"""
    if isinstance(q, PolicyVector):
        q = q.q
    F, V = next_generation_split(s0, flow, p, q)
    try:
        # F V^{-1} = (V^{-T} F^T)^T
        generation = -scipy.linalg.solve(V.T, F.T).T
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SolverError(f"transition matrix V is singular: {exc}") from exc
    return float(np.max(np.abs(np.linalg.eigvals(generation))))


def stability_certificate(P: np.ndarray) -> Optional[np.ndarray]:
    """Positive d with P d <= 0 when P is Hurwitz, else None"""
    try:
        eig = dominant_eigenpair(P)
    except SolverError as exc:
        logger.debug(f"no certificate: {exc}")
        return None
    if eig.lam >= 0:
        return None
    return eig.u / np.max(eig.u)
