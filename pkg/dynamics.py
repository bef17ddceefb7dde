#!/usr/bin/env python3
"""
Forward simulation of the networked epidemic.

The base model tracks susceptible, asymptomatic, symptomatic and recovered
fractions per node; the quarantine model adds a quarantined compartment fed at
rates q_a and q_s. Both are integrated with a fixed-step classical Runge-Kutta
scheme so runs are deterministic and share a time grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from errors import DataError, InstabilityError
from log_setup import get_logger
from model_core import CompartmentState, EpidemicParams, NetworkSpec, PolicyVector, unvec

logger = get_logger(__name__)

DT_DEFAULT = 0.05
HORIZON_DEFAULT = 360.0

CLAMP_TOL = 1e-12
INSTABILITY_TOL = 1e-9

AGGREGATE_COLUMNS = ["t", "active", "cumulative", "quarantined", "recovered"]
TRAJECTORY_COLUMNS = ["t", "node", "s", "x_a", "x_s", "k", "h"]


@dataclass(frozen=True)
class InitialConditionSpec:
    reporting_rate: float = 0.14
    recovered_ratio: float = 8878.0 / 215215.0
    symptomatic_fraction: float = 0.14
    scale_deaths: bool = False

    def __post_init__(self):
        for name in ("reporting_rate", "recovered_ratio", "symptomatic_fraction"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise DataError(f"{name} must lie in (0, 1], got {value}")


@dataclass(frozen=True)
class Trajectory:
    """States on a uniform time grid, stored as an array of shape (T, 5, n)"""
    times: np.ndarray
    values: np.ndarray
    populations: np.ndarray

    @property
    def n(self) -> int:
        return int(self.values.shape[2])

    def __len__(self) -> int:
        return int(self.times.size)

    def state(self, index: int) -> CompartmentState:
        return CompartmentState.from_array(self.values[index], t=float(self.times[index]))

    @property
    def states(self) -> List[CompartmentState]:
        return [self.state(i) for i in range(len(self))]

    @property
    def final(self) -> CompartmentState:
        return self.state(-1)

    def compartment(self, name: str) -> np.ndarray:
        """(T, n) series of one compartment"""
        return self.values[:, CompartmentState.COMPARTMENTS.index(name), :]

    @property
    def active(self) -> np.ndarray:
        return self.compartment("x_a") + self.compartment("x_s")


def initial_state(cases, populations: np.ndarray,
                  spec: Optional[InitialConditionSpec] = None) -> CompartmentState:
    """Per-node fractions at the reference date from reported cumulative cases and deaths"""
    spec = spec or InitialConditionSpec()
    populations = np.asarray(populations, dtype=float)
    cum_cases = np.asarray(cases.cum_cases, dtype=float)
    deaths = np.asarray(cases.deaths, dtype=float)
    nodes = list(getattr(cases, "nodes", ())) or [str(i) for i in range(populations.size)]

    adjusted = cum_cases / spec.reporting_rate
    for i in np.flatnonzero(adjusted > populations * (1 + 1e-12)):
        raise DataError(f"node {nodes[i]}: adjusted cases {adjusted[i]:g} exceed population {populations[i]:g}")

    infected = np.minimum(adjusted / populations, 1.0)
    dead = deaths / spec.reporting_rate if spec.scale_deaths else deaths
    h = spec.recovered_ratio * infected + dead / populations
    active = infected - h
    for i in np.flatnonzero(active < 0):
        raise DataError(f"node {nodes[i]}: deaths and recoveries exceed adjusted cumulative cases")

    n = populations.size
    return CompartmentState(
        s=1.0 - infected,
        x_a=(1.0 - spec.symptomatic_fraction) * active,
        x_s=spec.symptomatic_fraction * active,
        k=np.zeros(n),
        h=h,
    )


def _rhs(y: np.ndarray, flow: np.ndarray, p: EpidemicParams, q_a: np.ndarray,
         q_s: np.ndarray) -> np.ndarray:
    s, x_a, x_s, k, _ = y
    force = s * (flow @ (p.beta_a * x_a + p.beta_s * x_s))
    return np.vstack([
        -force,
        force - (p.epsilon + p.r_a + q_a) * x_a,
        p.epsilon * x_a - (p.r_s + q_s) * x_s,
        q_a * x_a + q_s * x_s - p.r_q * k,
        p.r_a * x_a + p.r_s * x_s + p.r_q * k,
    ])


def _clamp(y: np.ndarray, t: float) -> np.ndarray:
    if np.any(y < -INSTABILITY_TOL) or np.any(y > 1 + INSTABILITY_TOL):
        worst = float(np.min(y)) if np.min(y) < -INSTABILITY_TOL else float(np.max(y))
        raise InstabilityError(f"state left [0, 1] at t={t:g} (value {worst:.3e}); try a smaller dt")
    roundoff = (y < 0) & (y >= -CLAMP_TOL)
    y[roundoff] = 0.0
    if np.any(y < 0):
        logger.warning(f"negative state {np.min(y):.3e} kept at t={t:g}")
    return y


def _integrate(state0: CompartmentState, flow: np.ndarray, populations: np.ndarray,
               p: EpidemicParams, q_a: np.ndarray, q_s: np.ndarray, horizon: float,
               dt: float) -> Trajectory:
    if dt <= 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if horizon < 0:
        raise ValueError(f"horizon must be nonnegative, got {horizon}")
    problems = state0.violations()
    if problems:
        raise DataError("; ".join(problems), stage="simulate")

    steps = max(0, math.ceil(horizon / dt - 1e-9))
    values = np.empty((steps + 1, 5, state0.n))
    y = state0.as_array().astype(float)
    values[0] = y
    half = 0.5 * dt
    for step in range(steps):
        k1 = _rhs(y, flow, p, q_a, q_s)
        k2 = _rhs(y + half * k1, flow, p, q_a, q_s)
        k3 = _rhs(y + half * k2, flow, p, q_a, q_s)
        k4 = _rhs(y + dt * k3, flow, p, q_a, q_s)
        y = _clamp(y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4), (step + 1) * dt)
        values[step + 1] = y

    times = state0.t + dt * np.arange(steps + 1)
    logger.debug(f"integrated {steps} RK4 steps of {dt:g} days")
    return Trajectory(times=times, values=values, populations=np.asarray(populations, dtype=float))


def simulate_siqr(state0: CompartmentState, net: NetworkSpec, p: EpidemicParams,
                  q: PolicyVector, horizon: float = HORIZON_DEFAULT,
                  dt: float = DT_DEFAULT) -> Trajectory:
    if not isinstance(q, PolicyVector):
        q = PolicyVector.quarantine(q)
    q_a, q_s = np.asarray(q.q_a, dtype=float), np.asarray(q.q_s, dtype=float)
    if q_a.shape != (net.n,) or q_s.shape != (net.n,):
        raise ValueError(f"quarantine vector does not match {net.n} nodes")
    if q.violations():
        raise DataError("; ".join(q.violations()), stage="simulate")
    return _integrate(state0, net.flow, net.populations, p, q_a, q_s, horizon, dt)


def simulate_base(state0: CompartmentState, net: NetworkSpec, p: EpidemicParams,
                  horizon: float = HORIZON_DEFAULT, dt: float = DT_DEFAULT) -> Trajectory:
    return simulate_siqr(state0, net, p, PolicyVector.none(net.n), horizon, dt)


def simulate_travel(state0: CompartmentState, net: NetworkSpec, tau_vec: np.ndarray,
                    p: EpidemicParams, horizon: float = HORIZON_DEFAULT,
                    dt: float = DT_DEFAULT) -> Trajectory:
    """Base model under a replacement travel matrix"""
    return simulate_base(state0, net.with_tau(unvec(tau_vec, net.n)), p, horizon, dt)


def summarize(traj: Trajectory, populations: Optional[np.ndarray] = None) -> pd.DataFrame:
    """Population-weighted totals per time point"""
    weights = traj.populations if populations is None else np.asarray(populations, dtype=float)
    x_a, x_s = traj.compartment("x_a"), traj.compartment("x_s")
    k, h = traj.compartment("k"), traj.compartment("h")
    active = (x_a + x_s) @ weights
    quarantined = k @ weights
    recovered = h @ weights
    return pd.DataFrame({
        "t": traj.times,
        "active": active,
        "cumulative": active + quarantined + recovered,
        "quarantined": quarantined,
        "recovered": recovered,
    }, columns=AGGREGATE_COLUMNS)


def _subsample(traj: Trajectory, every: Optional[float]) -> np.ndarray:
    if not every or len(traj) < 2:
        return np.arange(len(traj))
    dt = float(traj.times[1] - traj.times[0])
    stride = max(1, int(round(every / dt)))
    index = np.arange(0, len(traj), stride)
    if index[-1] != len(traj) - 1:
        index = np.append(index, len(traj) - 1)
    return index


def trajectory_frame(traj: Trajectory, nodes: Sequence[str] = (),
                     every: Optional[float] = None) -> pd.DataFrame:
    """Long format: one row per (time, node)"""
    nodes = list(nodes) or [str(i) for i in range(traj.n)]
    index = _subsample(traj, every)
    times = traj.times[index]
    values = traj.values[index]
    frame = pd.DataFrame({
        "t": np.repeat(times, traj.n),
        "node": np.tile(nodes, times.size),
    })
    for c, name in enumerate(CompartmentState.COMPARTMENTS):
        frame[name] = values[:, c, :].reshape(-1)
    return frame[TRAJECTORY_COLUMNS]


def aggregate_frame(traj: Trajectory, every: Optional[float] = None) -> pd.DataFrame:
    frame = summarize(traj)
    return frame.iloc[_subsample(traj, every)].reset_index(drop=True)
