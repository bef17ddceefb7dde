#!/usr/bin/env python3
"""
Scenario pipeline: load tables, build the network, calibrate, optimize, simulate
every policy and write the artifacts.

Each stage tags any error it raises with its name so the CLI can report where
a run failed.
"""

from __future__ import annotations

import concurrent.futures
import re
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from config_parser import ScenarioConfig
from dynamics import (InitialConditionSpec, Trajectory, aggregate_frame, initial_state,
                      simulate_base, simulate_siqr, simulate_travel)
from errors import ConfigError, EpinetError
from generate_excel_comparison import create_excel_comparison
from generate_summary import (SCHEMA_VERSION, write_aggregate_csv, write_json, write_summary,
                              write_trajectory_csv)
from log_setup import get_logger
from mobility import build_travel_rates, calibrate_beta, check_strong_connectivity, load_tables
from model_core import (CompartmentState, EconomicCosts, EpidemicParams, NetworkSpec, PolicyVector,
                        assemble_quarantine_matrix, validate_params)
from policies import PolicyContext, make_policy, report_halving_time
from quarantine_opt import (FeasibilityReport, QuarantineSolution, feasibility_check,
                            optimal_quarantine, pdgd_quarantine, quarantine_cost)
from spectral import dominant_eigenpair, reproduction_number
from travel_opt import TravelSolution, TravelSolveOptions, solve_budgets

logger = get_logger(__name__)

BASELINE = "baseline"


@contextmanager
def stage(name: str):
    try:
        yield
    except EpinetError as exc:
        raise exc.with_stage(name)


def slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9.+-]+", "_", label).strip("_")


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    network: NetworkSpec
    params: EpidemicParams
    state0: CompartmentState
    costs: EconomicCosts
    feasibility: FeasibilityReport
    quarantine: Optional[QuarantineSolution] = None
    travel: Dict[float, TravelSolution] = field(default_factory=dict)
    policies: Dict[str, PolicyVector] = field(default_factory=dict)
    trajectories: Dict[str, Trajectory] = field(default_factory=dict)
    summary: Dict = field(default_factory=dict)
    written: List[Path] = field(default_factory=list)

    def aggregate(self, label: str) -> pd.DataFrame:
        return aggregate_frame(self.trajectories[label], self.config.output_every)


def prepare(config: ScenarioConfig):
    """Load data and build the calibrated network; shared by every command"""
    spec = InitialConditionSpec(**config.initial)
    with stage("load"):
        flows, populations, costs, cases = load_tables(config.data.as_dict(), spec.reporting_rate)

    with stage("network"):
        t_out = np.asarray(config.t_out, dtype=float)
        if t_out.ndim and t_out.size != flows.n:
            raise ConfigError(f"t_out lists {t_out.size} values for {flows.n} nodes")
        net = NetworkSpec.from_tau(build_travel_rates(flows, t_out), populations, flows.nodes)
        if not check_strong_connectivity(net.flow):
            raise ConfigError("infection-flow matrix of the input data is not strongly connected")

    with stage("initial"):
        state0 = initial_state(cases, populations, spec)

    with stage("calibration"):
        if config.target_growth is not None:
            base = config.params(beta_s=0.0)
            _, beta_s = calibrate_beta(net.flow, state0.s, base, config.target_growth, eta=config.eta)
        else:
            beta_s = config.beta_s
        params = config.params(beta_s=beta_s)

    with stage("validate"):
        validate_params(params, net).raise_if_invalid("validate")
    return net, params, state0, costs


def solve_quarantine(config: ScenarioConfig, net: NetworkSpec, params: EpidemicParams,
                     state0: CompartmentState, costs: EconomicCosts) -> QuarantineSolution:
    with stage("quarantine-opt"):
        if config.quarantine_method == "pdgd":
            return pdgd_quarantine(state0.s, net.flow, params, config.alpha, costs, **config.pdgd)
        return optimal_quarantine(state0.s, net.flow, params, config.alpha, costs)


def solve_travel(config: ScenarioConfig, net: NetworkSpec, params: EpidemicParams,
                 state0: CompartmentState, max_workers: Optional[int] = None) -> Dict[float, TravelSolution]:
    if not config.budgets:
        return {}
    with stage("travel-opt"):
        opts = TravelSolveOptions(**config.travel)
        return solve_budgets(net, state0.s, params, config.budgets, opts, max_workers)


def _simulate_all(jobs: Dict[str, Callable[[], Trajectory]],
                  max_workers: Optional[int]) -> Dict[str, Trajectory]:
    results: Dict[str, Trajectory] = {}
    with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as executor:
        future_to_label = {executor.submit(job): label for label, job in jobs.items()}
        for future in concurrent.futures.as_completed(future_to_label):
            label = future_to_label[future]
            try:
                results[label] = future.result()
            except EpinetError as exc:
                raise exc.with_stage(f"simulate {label}")
            logger.debug(f"simulated {label}")
    return {label: results[label] for label in jobs}


def _policy_row(label: str, traj: Trajectory, net: NetworkSpec, params: EpidemicParams,
                state0: CompartmentState, costs: EconomicCosts, q: Optional[PolicyVector]) -> Dict:
    q = q if q is not None else PolicyVector.none(net.n)
    M = assemble_quarantine_matrix(state0.s, net.flow, params, q)
    try:
        lam = dominant_eigenpair(M).lam
    except EpinetError as exc:
        logger.warning(f"{label}: lambda_max unavailable ({exc.message})")
        lam = None
    totals = aggregate_frame(traj).iloc[-1]
    return {
        "cost": quarantine_cost(q, costs),
        "lambda_max": lam,
        "r0": reproduction_number(state0.s, net.flow, params, q),
        "halving_time_days": report_halving_time(traj),
        "final_active": float(totals["active"]),
        "final_cumulative": float(totals["cumulative"]),
        "q_a": q.q_a,
        "q_s": q.q_s,
    }


def run_scenario(config: ScenarioConfig, max_workers: Optional[int] = None,
                 write: bool = True) -> ScenarioResult:
    net, params, state0, costs = prepare(config)
    logger.info(f"{config.name}: {net.n} nodes, beta_s={params.beta_s:.6g}, alpha={config.alpha:.6g}")

    with stage("feasibility"):
        report = feasibility_check(state0.s, net.flow, params, config.alpha)
        if not report.feasible:
            logger.warning(f"quarantine problem infeasible: {'; '.join(report.reasons)}")
        for note in report.notes:
            logger.info(note)

    result = ScenarioResult(config=config, network=net, params=params, state0=state0,
                            costs=costs, feasibility=report)
    result.quarantine = solve_quarantine(config, net, params, state0, costs)
    result.travel = solve_travel(config, net, params, state0, max_workers)

    with stage("policies"):
        context = PolicyContext(s0=state0.s, flow=net.flow, params=params, costs=costs,
                                alpha=config.alpha, default_seed=config.seed,
                                optimal=result.quarantine)
        reference = result.quarantine.cost
        for spec in config.policies:
            result.policies[spec.label] = make_policy(spec, reference, context)

    jobs: Dict[str, Callable[[], Trajectory]] = {}
    if config.include_baseline:
        jobs[BASELINE] = lambda: simulate_base(state0, net, params, config.horizon, config.dt)
    for label, q in result.policies.items():
        jobs[label] = lambda q=q: simulate_siqr(state0, net, params, q, config.horizon, config.dt)
    if config.simulate_travel:
        for b, solution in result.travel.items():
            jobs[f"travel_b{b:g}"] = lambda tau=solution.tau_star: simulate_travel(
                state0, net, tau, params, config.horizon, config.dt)
    result.trajectories = _simulate_all(jobs, max_workers)

    result.summary = build_summary(result, context.rng_names)
    if write:
        with stage("export"):
            result.written = write_outputs(result)
    return result


def build_summary(result: ScenarioResult, rng_names: Optional[Dict[str, str]] = None) -> Dict:
    config = result.config
    runs = {}
    for label, traj in result.trajectories.items():
        q = result.policies.get(label)
        if label.startswith("travel_b"):
            continue
        runs[label] = _policy_row(label, traj, result.network, result.params, result.state0,
                                  result.costs, q)

    sweep = [{
        "budget": b,
        "f_star": solution.f_star,
        "iterations": solution.iterations,
        "converged": solution.trace.converged,
        "final_active": (float(aggregate_frame(result.trajectories[f"travel_b{b:g}"]).iloc[-1]["active"])
                         if f"travel_b{b:g}" in result.trajectories else None),
    } for b, solution in sorted(result.travel.items())]

    generators = sorted(set((rng_names or {}).values())) or ["PCG64"]
    return {
        "schema_version": SCHEMA_VERSION,
        "scenario": config.name,
        "nodes": list(result.network.nodes),
        "parameters": {**result.params.to_dict(), "eta": config.eta, "t_out": config.t_out,
                       "horizon": config.horizon, "dt": config.dt},
        "feasibility": result.feasibility.to_dict(),
        "quarantine": result.quarantine.to_dict() if result.quarantine else None,
        "policies": runs,
        "travel_sweep": sweep,
        "rng": {"generator": generators[0], "seed": config.seed},
    }


def write_outputs(result: ScenarioResult) -> List[Path]:
    config = result.config
    out = Path(config.output_dir)
    written = []
    aggregates = {}
    for label, traj in result.trajectories.items():
        name = slug(label)
        written.append(write_trajectory_csv(traj, result.network.nodes,
                                            out / f"trajectory_{name}.csv", config.output_every))
        written.append(write_aggregate_csv(traj, out / f"aggregate_{name}.csv", config.output_every))
        aggregates[label] = result.aggregate(label)
    for b, solution in sorted(result.travel.items()):
        written.append(write_json(solution.to_dict(result.network.n), out / f"travel_b{b:g}.json"))
    written.append(write_summary(result.summary, out))
    if config.export_xlsx:
        written.append(create_excel_comparison(aggregates, out / "results.xlsx", result.summary))
    logger.info(f"wrote {len(written)} files to {out}")
    return written
