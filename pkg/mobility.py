#!/usr/bin/env python3
"""
Mobility and case-count ingestion.

Reads the four CSV tables a scenario is built from, turns origin-destination
trip counts into travel rates, derives the infection-flow matrix, and calibrates
transmission rates to an observed growth rate.

CSV schemas (UTF-8, comma separated, header row required):
    flows.csv       origin,destination,trips
    population.csv  node,population
    gdp.csv         node,gdp
    cases.csv       node,cum_cases,deaths,date
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import networkx as nx
import numpy as np
import pandas as pd

from errors import ConnectivityError, DataError, SolverError
from log_setup import get_logger
from model_core import EconomicCosts, EpidemicParams, base_matrix, infection_flow
from spectral import dominant_eigenpair

logger = get_logger(__name__)

REPORTING_RATE = 0.14

CALIBRATION_BRACKET = (0.0, 100.0)
CALIBRATION_TOL = 1e-8
CALIBRATION_MAX_ITER = 200

SCHEMAS = {
    "flows": ["origin", "destination", "trips"],
    "population": ["node", "population"],
    "gdp": ["node", "gdp"],
    "cases": ["node", "cum_cases", "deaths", "date"],
}
NUMERIC_COLUMNS = {
    "flows": ["trips"],
    "population": ["population"],
    "gdp": ["gdp"],
    "cases": ["cum_cases", "deaths"],
}


@dataclass(frozen=True)
class FlowTable:
    """Aggregated origin-destination trip counts over a node roster"""
    nodes: Tuple[str, ...]
    records: pd.DataFrame

    @classmethod
    def from_records(cls, records: Sequence[Tuple[str, str, float]],
                     nodes: Sequence[str]) -> "FlowTable":
        frame = pd.DataFrame(list(records), columns=SCHEMAS["flows"])
        frame["origin"] = frame["origin"].astype(str)
        frame["destination"] = frame["destination"].astype(str)
        frame["trips"] = frame["trips"].astype(float)
        return cls(nodes=tuple(str(node) for node in nodes), records=_aggregate_flows(frame))

    @classmethod
    def from_matrix(cls, trips: np.ndarray, nodes: Sequence[str]) -> "FlowTable":
        trips = np.asarray(trips, dtype=float)
        records = [(nodes[i], nodes[j], trips[i, j])
                   for i in range(trips.shape[0]) for j in range(trips.shape[1])
                   if trips[i, j] > 0]
        return cls.from_records(records, nodes)

    @property
    def n(self) -> int:
        return len(self.nodes)

    def matrix(self) -> np.ndarray:
        """Dense P_f indexed by roster order"""
        index = {node: i for i, node in enumerate(self.nodes)}
        trips = np.zeros((self.n, self.n))
        if len(self.records):
            rows = self.records["origin"].map(index).to_numpy()
            cols = self.records["destination"].map(index).to_numpy()
            np.add.at(trips, (rows, cols), self.records["trips"].to_numpy(dtype=float))
        return trips


@dataclass(frozen=True)
class CaseTable:
    """Cumulative cases and deaths per node at the reference date"""
    nodes: Tuple[str, ...]
    cum_cases: np.ndarray
    deaths: np.ndarray
    date: str = ""


def _aggregate_flows(frame: pd.DataFrame) -> pd.DataFrame:
    return (frame.groupby(["origin", "destination"], as_index=False, sort=True)["trips"].sum())


def _read_table(path: Union[str, Path], kind: str) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{kind} table not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, skipinitialspace=True, encoding="utf-8")
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=SCHEMAS[kind])
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: parse error: {exc}") from exc

    frame.columns = [str(column).strip() for column in frame.columns]
    missing = [column for column in SCHEMAS[kind] if column not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing column(s) {', '.join(missing)} "
                        f"(expected header {','.join(SCHEMAS[kind])})")

    for column in SCHEMAS[kind]:
        frame[column] = frame[column].str.strip()
    key_columns = [c for c in SCHEMAS[kind] if c not in NUMERIC_COLUMNS[kind] and c != "date"]
    for column in key_columns:
        blank = frame[column].isna() | (frame[column] == "")
        if blank.any():
            line = int(np.flatnonzero(blank.to_numpy())[0]) + 2
            raise DataError(f"{path}:{line}: malformed row, empty {column}")

    for column in NUMERIC_COLUMNS[kind]:
        values = pd.to_numeric(frame[column], errors="coerce")
        bad = values.isna() | ~np.isfinite(values.astype(float))
        if bad.any():
            line = int(np.flatnonzero(bad.to_numpy())[0]) + 2
            raise DataError(f"{path}:{line}: malformed row, {column}={frame[column].iloc[line - 2]!r}")
        negative = values < 0
        if negative.any():
            line = int(np.flatnonzero(negative.to_numpy())[0]) + 2
            raise DataError(f"{path}:{line}: negative count in {column}")
        frame[column] = values.astype(float)
    return frame


def _keyed(frame: pd.DataFrame, column: str, path: Path, roster: List[str]) -> np.ndarray:
    duplicated = frame["node"].duplicated()
    if duplicated.any():
        line = int(np.flatnonzero(duplicated.to_numpy())[0]) + 2
        raise DataError(f"{path}:{line}: duplicate node {frame['node'].iloc[line - 2]!r}")
    if set(frame["node"]) != set(roster):
        extra = sorted(set(frame["node"]) - set(roster))
        absent = sorted(set(roster) - set(frame["node"]))
        raise DataError(f"{path}: node roster mismatch (unknown: {extra or '-'}, missing: {absent or '-'})")
    return frame.set_index("node").loc[roster, column].to_numpy(dtype=float)


def load_tables(paths: Dict[str, Union[str, Path]], reporting_rate: float = REPORTING_RATE
                ) -> Tuple[FlowTable, np.ndarray, EconomicCosts, CaseTable]:
    """Load and cross-validate flows, populations, GDP-derived costs and cases"""
    for kind in SCHEMAS:
        if kind not in paths:
            raise DataError(f"no path given for the {kind} table")

    population = _read_table(paths["population"], "population")
    roster = list(population["node"])
    if not roster:
        raise DataError(f"{paths['population']}: no nodes")
    populations = _keyed(population, "population", Path(paths["population"]), roster)
    for node, value in zip(roster, populations):
        if value <= 0:
            raise DataError(f"{paths['population']}: population of {node!r} must be positive")

    gdp = _read_table(paths["gdp"], "gdp")
    costs = EconomicCosts.from_gdp(_keyed(gdp, "gdp", Path(paths["gdp"]), roster))

    cases_frame = _read_table(paths["cases"], "cases")
    cum_cases = _keyed(cases_frame, "cum_cases", Path(paths["cases"]), roster)
    deaths = _keyed(cases_frame, "deaths", Path(paths["cases"]), roster)
    for i, node in enumerate(roster):
        if deaths[i] > cum_cases[i]:
            raise DataError(f"{paths['cases']}: deaths exceed cumulative cases for {node!r}")
        if cum_cases[i] > populations[i] / reporting_rate:
            raise DataError(f"{paths['cases']}: cumulative cases for {node!r} exceed "
                            f"population / reporting rate")
    dates = sorted(set(cases_frame["date"].dropna()))
    if len(dates) > 1:
        logger.warning(f"cases table mixes reference dates {dates}; using {dates[-1]}")
    cases = CaseTable(nodes=tuple(roster), cum_cases=cum_cases, deaths=deaths,
                      date=dates[-1] if dates else "")

    flows_frame = _read_table(paths["flows"], "flows")
    unknown = sorted((set(flows_frame["origin"]) | set(flows_frame["destination"])) - set(roster))
    if unknown:
        raise DataError(f"{paths['flows']}: node roster mismatch, unknown nodes {unknown}")
    flows = FlowTable(nodes=tuple(roster), records=_aggregate_flows(flows_frame))
    outgoing = flows.matrix().sum(axis=1)
    silent = [roster[i] for i in np.flatnonzero(outgoing <= 0)]
    if silent:
        raise DataError(f"{paths['flows']}: every node needs outgoing flow (none for {silent})")

    logger.info(f"loaded {len(roster)} nodes, {len(flows.records)} flow pairs, cases as of {cases.date or 'n/a'}")
    return flows, populations, costs, cases


def build_travel_rates(flows: Union[FlowTable, np.ndarray], t_out=1.0 / 3.0) -> np.ndarray:
    """tau_ij = t_i P_f(i, j) / sum_k P_f(i, k)"""
    trips = flows.matrix() if isinstance(flows, FlowTable) else np.asarray(flows, dtype=float)
    n = trips.shape[0]
    t_out = np.broadcast_to(np.asarray(t_out, dtype=float), (n,))
    if np.any(t_out <= 0) or np.any(t_out > 1):
        raise DataError("fraction of day outside must lie in (0, 1]")
    totals = trips.sum(axis=1)
    silent = np.flatnonzero(totals <= 0)
    if silent.size:
        raise DataError(f"zero outgoing flow for node(s) {silent.tolist()}")
    return trips * (t_out / totals)[:, np.newaxis]


def build_infection_flow(tau: np.ndarray, populations: np.ndarray) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    populations = np.asarray(populations, dtype=float)
    n = populations.size
    if tau.shape != (n, n):
        raise DataError(f"travel matrix shape {tau.shape} does not match {n} populations")
    if np.any(tau < 0):
        raise DataError("travel rates must be nonnegative")
    if np.any(populations <= 0):
        raise DataError("populations must be positive")
    return infection_flow(tau, populations)


def check_strong_connectivity(A: np.ndarray) -> bool:
    """Two-pass reachability from node 0 on the digraph {(i, j): a_ij > 0} and its reverse"""
    A = np.asarray(A)
    n = A.shape[0]
    graph = nx.DiGraph()
    graph.add_nodes_from(range(n))
    graph.add_edges_from((int(i), int(j)) for i, j in zip(*np.nonzero(A > 0)) if i != j)
    forward = nx.descendants(graph, 0)
    if len(forward) != n - 1:
        return False
    return len(nx.descendants(graph.reverse(copy=False), 0)) == n - 1


def _growth_rate(A: np.ndarray, s0: np.ndarray, p: EpidemicParams) -> float:
    if p.beta_s == 0 and p.beta_a == 0:
        # Block-triangular: decoupled decay of each compartment.
        return max(-(p.epsilon + p.r_a), -p.r_s)
    return dominant_eigenpair(base_matrix(s0, A, p)).lam


def calibrate_beta(A: np.ndarray, s0: np.ndarray, p: EpidemicParams, target_growth: float,
                   eta: float = 0.6754, tol: float = CALIBRATION_TOL,
                   max_iter: int = CALIBRATION_MAX_ITER) -> Tuple[float, float]:
    """
    Find beta_s with lambda_max(M(t0)) = target_growth and beta_a = eta * beta_s by
    bisection; lambda_max is nondecreasing in beta_s.
    """
    A = np.asarray(A, dtype=float)
    s0 = np.asarray(s0, dtype=float)
    if not check_strong_connectivity(A):
        raise ConnectivityError("infection-flow matrix is not strongly connected", stage="calibration")
    if np.any(s0 <= 0):
        raise DataError("calibration needs a positive susceptible fraction at every node")

    def growth(beta_s: float) -> float:
        return _growth_rate(A, s0, p.with_betas(eta * beta_s, beta_s))

    lo, hi = CALIBRATION_BRACKET
    g_lo = growth(lo)
    if abs(g_lo - target_growth) <= tol:
        return 0.0, 0.0
    if target_growth < g_lo:
        raise SolverError(f"bracket failure: target growth {target_growth:g} is below "
                          f"{g_lo:g}, the growth rate without transmission")
    g_hi = growth(hi)
    if target_growth > g_hi:
        raise SolverError(f"bracket failure: target growth {target_growth:g} exceeds "
                          f"{g_hi:g} reached at beta_s={hi:g}")

    mid = hi
    for iteration in range(max_iter):
        mid = 0.5 * (lo + hi)
        g_mid = growth(mid)
        if abs(g_mid - target_growth) <= tol and hi - lo <= tol:
            break
        if g_mid < target_growth:
            lo = mid
        else:
            hi = mid
        if hi - lo <= np.finfo(float).eps * max(1.0, hi):
            break
    logger.info(f"calibrated beta_s={mid:.8g} (beta_a={eta * mid:.8g}) after {iteration + 1} bisections")
    return eta * mid, mid
