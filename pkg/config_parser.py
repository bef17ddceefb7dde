#!/usr/bin/env python3
"""
Configuration parser for epinet scenarios.

A scenario is a JSON (or YAML) mapping. Every field is validated up front and
all problems are reported together, so nothing is computed from a half-valid
configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml

from errors import ConfigError
from model_core import ALPHA_DEFAULT, EPSILON_DEFAULT, ETA_DEFAULT, RECOVERY_DEFAULT, EpidemicParams
from policies import PolicySpec

QUARANTINE_METHODS = ("balance", "pdgd")
DATA_TABLES = ("flows", "population", "gdp", "cases")

KNOWN_KEYS = {
    "name", "data", "t_out", "params", "calibration", "alpha", "budgets", "travel",
    "policies", "quarantine_method", "pdgd", "initial", "horizon", "dt", "output_every",
    "output_dir", "seed", "include_baseline", "simulate_travel", "export_xlsx",
}


@dataclass(frozen=True)
class DataPaths:
    flows: Path
    population: Path
    gdp: Path
    cases: Path

    def as_dict(self) -> Dict[str, Path]:
        return {name: getattr(self, name) for name in DATA_TABLES}


@dataclass(frozen=True)
class ScenarioConfig:
    data: DataPaths
    policies: Tuple[PolicySpec, ...]
    name: str = "scenario"
    t_out: Union[float, Tuple[float, ...]] = 1.0 / 3.0
    epsilon: float = EPSILON_DEFAULT
    r_a: float = RECOVERY_DEFAULT
    r_s: float = RECOVERY_DEFAULT
    r_q: float = RECOVERY_DEFAULT
    eta: float = ETA_DEFAULT
    beta_s: Optional[float] = None
    target_growth: Optional[float] = None
    alpha: float = ALPHA_DEFAULT
    budgets: Tuple[float, ...] = ()
    travel: Dict[str, Any] = field(default_factory=dict)
    quarantine_method: str = "balance"
    pdgd: Dict[str, Any] = field(default_factory=dict)
    initial: Dict[str, Any] = field(default_factory=dict)
    horizon: float = 360.0
    dt: float = 0.05
    output_every: float = 1.0
    output_dir: Path = Path("results")
    seed: int = 0
    include_baseline: bool = True
    simulate_travel: bool = False
    export_xlsx: bool = False

    def params(self, beta_s: Optional[float] = None) -> EpidemicParams:
        """Epidemic parameters with beta_a = eta * beta_s"""
        beta_s = self.beta_s if beta_s is None else beta_s
        return EpidemicParams.from_beta_s(beta_s, self.eta, epsilon=self.epsilon, r_a=self.r_a,
                                          r_s=self.r_s, r_q=self.r_q, alpha=self.alpha)

    def with_overrides(self, seed: Optional[int] = None,
                       output_dir: Optional[Union[str, Path]] = None) -> "ScenarioConfig":
        changes = {}
        if seed is not None:
            changes["seed"] = int(seed)
        if output_dir is not None:
            changes["output_dir"] = Path(output_dir)
        return replace(self, **changes) if changes else self


def load_config(path: Union[str, Path]) -> Dict[str, Any]:
    """Read the raw scenario mapping"""
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"scenario file not found: {config_path}", stage="config")
    try:
        with open(config_path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {config_path}: {e}", stage="config") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{config_path}: top level must be a mapping", stage="config")
    return raw


def get_value(raw: Dict[str, Any], path: str) -> Any:
    """Get a value using dot notation (e.g. 'calibration.target_growth' or 'policies.0')"""
    current: Any = raw
    for key in path.split("."):
        try:
            if isinstance(current, list):
                current = current[int(key)]
            else:
                current = current[key]
        except (KeyError, IndexError, ValueError, TypeError):
            raise ConfigError(f"path '{path}' not found in configuration", stage="config") from None
    return current


class _Collector:
    def __init__(self):
        self.problems: List[str] = []

    def number(self, section: Dict[str, Any], key: str, default, *, prefix: str = "",
               minimum: Optional[float] = None, exclusive: bool = False,
               maximum: Optional[float] = None):
        value = section.get(key, default)
        if value is None:
            return None
        label = f"{prefix}{key}"
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            self.problems.append(f"{label} must be a finite number, got {value!r}")
            return default
        if minimum is not None and (value <= minimum if exclusive else value < minimum):
            self.problems.append(f"{label} must be {'>' if exclusive else '>='} {minimum:g}, got {value:g}")
        if maximum is not None and value > maximum:
            self.problems.append(f"{label} must be <= {maximum:g}, got {value:g}")
        return float(value)

    def flag(self, raw: Dict[str, Any], key: str, default: bool) -> bool:
        value = raw.get(key, default)
        if not isinstance(value, bool):
            self.problems.append(f"{key} must be true or false, got {value!r}")
            return default
        return value

    def mapping(self, raw: Dict[str, Any], key: str) -> Dict[str, Any]:
        value = raw.get(key) or {}
        if not isinstance(value, dict):
            self.problems.append(f"{key} must be a mapping")
            return {}
        return value


def _data_paths(raw: Dict[str, Any], base_dir: Path, check: _Collector) -> Optional[DataPaths]:
    data = check.mapping(raw, "data")
    if not data:
        check.problems.append("data section with flows, population, gdp and cases paths is required")
        return None
    resolved = {}
    for table in DATA_TABLES:
        if table not in data:
            check.problems.append(f"data.{table} path is required")
            continue
        path = Path(str(data[table]))
        if not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            check.problems.append(f"data.{table} file not found: {path}")
        resolved[table] = path
    if len(resolved) != len(DATA_TABLES):
        return None
    return DataPaths(**resolved)


def parse_config(raw: Dict[str, Any], base_dir: Union[str, Path] = ".") -> ScenarioConfig:
    """Validate a raw scenario mapping; raises one ConfigError listing every problem"""
    base_dir = Path(base_dir)
    check = _Collector()

    unknown = sorted(set(raw) - KNOWN_KEYS)
    if unknown:
        check.problems.append(f"unknown field(s): {', '.join(unknown)}")

    data = _data_paths(raw, base_dir, check)

    policies: List[PolicySpec] = []
    raw_policies = raw.get("policies") or []
    if not isinstance(raw_policies, list) or not raw_policies:
        check.problems.append("policies must be a nonempty list")
    else:
        for item in raw_policies:
            try:
                policies.append(PolicySpec.parse(item))
            except ConfigError as e:
                check.problems.append(e.message)
        labels = [spec.label for spec in policies]
        if len(set(labels)) != len(labels):
            check.problems.append(f"duplicate policies in {labels}")

    t_out = raw.get("t_out", 1.0 / 3.0)
    if isinstance(t_out, list):
        if not t_out or any(isinstance(t, bool) or not isinstance(t, (int, float)) or not 0 < t <= 1
                            for t in t_out):
            check.problems.append("t_out entries must lie in (0, 1]")
        t_out = tuple(float(t) for t in t_out if isinstance(t, (int, float)))
    else:
        t_out = check.number(raw, "t_out", 1.0 / 3.0, minimum=0.0, exclusive=True, maximum=1.0)

    params = check.mapping(raw, "params")
    unknown_params = sorted(set(params) - {"epsilon", "r_a", "r_s", "r_q", "eta", "beta_s"})
    if unknown_params:
        check.problems.append(f"unknown params field(s): {', '.join(unknown_params)}")
    rates = {key: check.number(params, key, default, prefix="params.", minimum=0.0)
             for key, default in (("epsilon", EPSILON_DEFAULT), ("r_a", RECOVERY_DEFAULT),
                                  ("r_s", RECOVERY_DEFAULT), ("r_q", RECOVERY_DEFAULT))}
    eta = check.number(params, "eta", ETA_DEFAULT, prefix="params.", minimum=0.0, maximum=1.0)
    beta_s = check.number(params, "beta_s", None, prefix="params.", minimum=0.0)

    calibration = check.mapping(raw, "calibration")
    target_growth = check.number(calibration, "target_growth", None, prefix="calibration.")
    if beta_s is None and target_growth is None:
        check.problems.append("either params.beta_s or calibration.target_growth is required")
    if beta_s is not None and target_growth is not None:
        check.problems.append("params.beta_s and calibration.target_growth are mutually exclusive")

    alpha = check.number(raw, "alpha", ALPHA_DEFAULT, minimum=0.0)

    budgets = raw.get("budgets") or []
    if not isinstance(budgets, list) or any(
            isinstance(b, bool) or not isinstance(b, (int, float)) or b < 0 for b in budgets):
        check.problems.append("budgets must be a list of nonnegative numbers")
        budgets = []
    elif budgets != sorted(budgets):
        check.problems.append("budgets must be sorted ascending")

    travel = check.mapping(raw, "travel")
    unknown_travel = sorted(set(travel) - {"beta_bt", "max_iters", "grad_tol", "step_tol", "support_floor"})
    if unknown_travel:
        check.problems.append(f"unknown travel field(s): {', '.join(unknown_travel)}")
    if "beta_bt" in travel:
        beta_bt = check.number(travel, "beta_bt", 0.5, prefix="travel.", minimum=0.0, exclusive=True)
        if beta_bt is not None and beta_bt >= 1:
            check.problems.append("travel.beta_bt must be < 1")
    if "support_floor" in travel:
        support_floor = check.number(travel, "support_floor", 0.05, prefix="travel.", minimum=0.0)
        if support_floor is not None and support_floor >= 1:
            check.problems.append("travel.support_floor must be < 1")

    method = raw.get("quarantine_method", "balance")
    if method not in QUARANTINE_METHODS:
        check.problems.append(f"quarantine_method must be one of {', '.join(QUARANTINE_METHODS)}, got {method!r}")

    pdgd = check.mapping(raw, "pdgd")
    unknown_pdgd = sorted(set(pdgd) - {"rho", "step", "max_steps", "tol"})
    if unknown_pdgd:
        check.problems.append(f"unknown pdgd field(s): {', '.join(unknown_pdgd)}")
    for key in ("rho", "step", "tol"):
        if key in pdgd:
            check.number(pdgd, key, None, prefix="pdgd.", minimum=0.0, exclusive=True)

    initial = check.mapping(raw, "initial")
    unknown_initial = sorted(set(initial) - {"reporting_rate", "recovered_ratio",
                                             "symptomatic_fraction", "scale_deaths"})
    if unknown_initial:
        check.problems.append(f"unknown initial field(s): {', '.join(unknown_initial)}")
    for key in ("reporting_rate", "recovered_ratio", "symptomatic_fraction"):
        if key in initial:
            check.number(initial, key, None, prefix="initial.", minimum=0.0, exclusive=True, maximum=1.0)

    horizon = check.number(raw, "horizon", 360.0, minimum=0.0, exclusive=True)
    dt = check.number(raw, "dt", 0.05, minimum=0.0, exclusive=True)
    output_every = check.number(raw, "output_every", 1.0, minimum=0.0, exclusive=True)
    if dt and horizon and dt > horizon:
        check.problems.append(f"dt ({dt:g}) exceeds the horizon ({horizon:g})")

    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        check.problems.append(f"seed must be a nonnegative integer, got {seed!r}")
        seed = 0

    flags = {key: check.flag(raw, key, default) for key, default in
             (("include_baseline", True), ("simulate_travel", False), ("export_xlsx", False))}
    if flags["simulate_travel"] and not budgets:
        check.problems.append("simulate_travel needs at least one budget")

    if check.problems:
        raise ConfigError("; ".join(check.problems), stage="config")

    output_dir = Path(str(raw.get("output_dir", "results")))
    if not output_dir.is_absolute():
        output_dir = base_dir / output_dir

    return ScenarioConfig(
        data=data,
        policies=tuple(policies),
        name=str(raw.get("name", "scenario")),
        t_out=t_out,
        eta=eta,
        beta_s=beta_s,
        target_growth=target_growth,
        alpha=alpha,
        budgets=tuple(float(b) for b in budgets),
        travel=dict(travel),
        quarantine_method=method,
        pdgd=dict(pdgd),
        initial=dict(initial),
        horizon=horizon,
        dt=dt,
        output_every=output_every,
        output_dir=output_dir,
        seed=seed,
        **rates,
        **flags,
    )


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    path = Path(path)
    return parse_config(load_config(path), base_dir=path.parent)
