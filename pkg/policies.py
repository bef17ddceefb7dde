#!/usr/bin/env python3
"""
Quarantine policies compared in a scenario.

Every comparison policy is scaled to the same total economic cost as a
reference (normally the cost-optimal policy), so the simulations differ only
in how quarantine effort is distributed across nodes.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Dict, Optional, Union

import numpy as np

from errors import ConfigError, InfeasibleError
from log_setup import get_logger
from model_core import EconomicCosts, EpidemicParams, PolicyVector
from quarantine_opt import QuarantineSolution, optimal_quarantine, quarantine_cost

logger = get_logger(__name__)

POLICY_KINDS = ("optimal", "uniform", "random", "bounded-decline")
COST_TOL = 1e-8
MARGIN = 1e-6
MAX_BISECTIONS = 200

_CALL_FORM = re.compile(r"^\s*([a-z-]+)\s*(?:\(\s*([^)]*)\s*\))?\s*$")


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    seed: Optional[int] = None
    bound: Optional[float] = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigError(f"unknown policy kind {self.kind!r} (expected one of {', '.join(POLICY_KINDS)})")

    @classmethod
    def parse(cls, value: Union[str, dict]) -> "PolicySpec":
        """Accepts "uniform", "random(7)", "bounded-decline(-0.05)" or a mapping with a kind key"""
        if isinstance(value, dict):
            if "kind" not in value:
                raise ConfigError(f"policy mapping without a kind: {value}")
            extra = set(value) - {"kind", "seed", "bound"}
            if extra:
                raise ConfigError(f"unknown policy field(s) {sorted(extra)}")
            seed = value.get("seed")
            bound = value.get("bound")
            return cls(kind=str(value["kind"]), seed=None if seed is None else int(seed),
                       bound=None if bound is None else float(bound))

        match = _CALL_FORM.match(str(value))
        if not match:
            raise ConfigError(f"cannot parse policy {value!r}")
        kind, argument = match.group(1), match.group(2)
        if not argument:
            return cls(kind=kind)
        try:
            if kind == "random":
                return cls(kind=kind, seed=int(argument))
            if kind == "bounded-decline":
                return cls(kind=kind, bound=float(argument))
        except ValueError as exc:
            raise ConfigError(f"bad argument in policy {value!r}: {exc}") from exc
        raise ConfigError(f"policy {kind!r} takes no argument")

    @property
    def label(self) -> str:
        if self.kind == "random":
            return f"random({self.seed if self.seed is not None else 0})"
        if self.kind == "bounded-decline" and self.bound is not None:
            return f"bounded-decline({self.bound:g})"
        return self.kind

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.seed is not None:
            out["seed"] = self.seed
        if self.bound is not None:
            out["bound"] = self.bound
        return out


@dataclass
class PolicyContext:
    s0: np.ndarray
    flow: np.ndarray
    params: EpidemicParams
    costs: EconomicCosts
    alpha: float
    default_seed: int = 0
    optimal: Optional[QuarantineSolution] = None
    rng_names: Dict[str, str] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return 2 * int(np.asarray(self.s0).size)


def _bisect_scale(cost_at, reference_cost: float, hi: float) -> float:
    """Smallest-gap scale c in [0, hi] with cost_at(c) = reference_cost; cost_at is increasing"""
    lo = 0.0
    if abs(cost_at(lo) - reference_cost) <= COST_TOL:
        return lo
    top = cost_at(hi)
    if reference_cost > top + COST_TOL:
        raise InfeasibleError(f"reference cost {reference_cost:.10g} unreachable; "
                              f"maximum attainable cost is {top:.10g}")
    mid = hi
    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        gap = cost_at(mid) - reference_cost
        if abs(gap) <= COST_TOL:
            break
        if gap < 0:
            lo = mid
        else:
            hi = mid
    return mid


def _decoupled_growth(ctx: PolicyContext) -> np.ndarray:
    """lambda_max of each node's 2x2 block without quarantine"""
    p = ctx.params
    self_contact = np.asarray(ctx.s0) * np.diag(ctx.flow)
    a = p.beta_a * self_contact - (p.epsilon + p.r_a)
    d = -p.r_s * np.ones_like(a)
    coupling = p.beta_s * self_contact * p.epsilon
    return 0.5 * (a + d) + np.sqrt(0.25 * (a - d) ** 2 + coupling)


def bounded_decline_rates(growth: np.ndarray, bound: float) -> np.ndarray:
    """Per-node q with q_a = q_s so every decoupled block decays at least to the bound"""
    q = np.clip(growth - bound, 0.0, 1.0 - MARGIN)
    return np.concatenate([q, q])


def make_policy(spec: PolicySpec, reference_cost: Optional[float],
                context: PolicyContext) -> PolicyVector:
    z = context.costs
    size = context.size
    if spec.kind == "optimal":
        if context.optimal is None:
            context.optimal = optimal_quarantine(context.s0, context.flow, context.params,
                                                 context.alpha, z)
        return context.optimal.policy

    if spec.kind == "bounded-decline" and spec.bound is not None:
        return PolicyVector.quarantine(bounded_decline_rates(_decoupled_growth(context), spec.bound))

    if reference_cost is None:
        raise ConfigError(f"policy {spec.label} needs a reference cost")
    floor = quarantine_cost(np.zeros(size), z)
    if reference_cost < floor - COST_TOL:
        raise ConfigError(f"reference cost {reference_cost:g} is below the no-quarantine cost {floor:g}")

    if spec.kind == "uniform":
        c = _bisect_scale(lambda c: quarantine_cost(np.full(size, c), z), reference_cost, 1.0 - MARGIN)
        return PolicyVector.quarantine(np.full(size, c))

    if spec.kind == "random":
        seed = context.default_seed if spec.seed is None else spec.seed
        rng = np.random.default_rng(seed)
        context.rng_names[spec.label] = type(rng.bit_generator).__name__
        u = rng.uniform(0.0, 1.0, size)
        hi = (1.0 - MARGIN) / float(np.max(u))
        c = _bisect_scale(lambda c: quarantine_cost(c * u, z), reference_cost, hi)
        return PolicyVector.quarantine(c * u)

    growth = _decoupled_growth(context)
    # cost decreases as the bound rises; bisect on the decay required below the uncontrolled rate
    top = float(np.max(growth))
    span = top - (float(np.min(growth)) - (1.0 - MARGIN))
    shift = _bisect_scale(lambda s: quarantine_cost(bounded_decline_rates(growth, top - s), z),
                          reference_cost, span)
    logger.debug(f"bounded-decline bound {top - shift:.6g} per day")
    return PolicyVector.quarantine(bounded_decline_rates(growth, top - shift))


def report_halving_time(traj, active: Optional[np.ndarray] = None) -> Optional[float]:
    """ln 2 / |slope| of log active infections over the final third of the run, None if not decaying"""
    if active is None:
        active = traj.active @ traj.populations
    times = np.asarray(traj.times, dtype=float)
    start = times[0] + 2.0 * (times[-1] - times[0]) / 3.0
    window = (times >= start) & (np.asarray(active) > 0)
    if np.count_nonzero(window) < 2:
        logger.info("halving time unavailable: no positive active cases in the final third")
        return None
    slope, _ = np.polyfit(times[window], np.log(np.asarray(active)[window]), 1)
    if slope >= 0:
        logger.info(f"halving time unavailable: active infections grow at {slope:.4g} per day")
        return None
    return math.log(2.0) / abs(slope)
