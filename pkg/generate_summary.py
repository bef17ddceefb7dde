#!/usr/bin/env python3
"""
Writers for scenario artifacts: per-node trajectory CSVs, aggregate CSVs and
summary.json. Output is byte-stable for identical inputs.
"""

import json
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from dynamics import Trajectory, aggregate_frame, trajectory_frame

SCHEMA_VERSION = "1.0"
FLOAT_FORMAT = "%.12g"

console = Console()


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if np.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, Path):
        return str(value)
    return value


def write_frame(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_trajectory_csv(traj: Trajectory, nodes: Sequence[str], path: Path,
                         every: Optional[float] = None) -> Path:
    """Header t,node,s,x_a,x_s,k,h"""
    return write_frame(trajectory_frame(traj, nodes, every), path)


def write_aggregate_csv(traj: Trajectory, path: Path, every: Optional[float] = None) -> Path:
    """Header t,active,cumulative,quarantined,recovered"""
    return write_frame(aggregate_frame(traj, every), path)


def write_json(payload: Dict[str, Any], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(_jsonable(payload), f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")
    return path


def write_summary(summary: Dict[str, Any], output_dir: Path) -> Path:
    payload = dict(summary)
    payload["schema_version"] = SCHEMA_VERSION
    return write_json(payload, Path(output_dir) / "summary.json")


def _fmt(value: Any, spec: str = ".6g") -> str:
    if value is None:
        return "-"
    return format(value, spec)


def print_summary(summary: Dict[str, Any]):
    """Rich table of per-policy results"""
    table = Table(title=f"📊 Scenario {summary.get('scenario', '')}", expand=False)
    table.add_column("Policy", style="cyan")
    table.add_column("Cost", justify="right")
    table.add_column("λ_max", justify="right", style="yellow")
    table.add_column("R0", justify="right")
    table.add_column("Halving (days)", justify="right", style="green")
    table.add_column("Final active", justify="right")
    table.add_column("Final cumulative", justify="right", style="red")

    for label, row in summary.get("policies", {}).items():
        table.add_row(label, _fmt(row.get("cost")), _fmt(row.get("lambda_max"), ".6f"),
                      _fmt(row.get("r0"), ".4f"), _fmt(row.get("halving_time_days"), ".1f"),
                      _fmt(row.get("final_active"), ",.1f"), _fmt(row.get("final_cumulative"), ",.1f"))
    console.print(table)

    sweep = summary.get("travel_sweep") or []
    if sweep:
        travel = Table(title="🚆 Travel budget sweep", expand=False)
        travel.add_column("Budget", style="cyan", justify="right")
        travel.add_column("f*", justify="right", style="yellow")
        travel.add_column("Iterations", justify="right")
        travel.add_column("Converged", justify="center")
        for row in sweep:
            travel.add_row(_fmt(row["budget"], "g"), _fmt(row["f_star"], ".6f"),
                           str(row["iterations"]), "✅" if row["converged"] else "⚠️")
        console.print(travel)


if __name__ == "__main__":
    if len(sys.argv) != 2:
        print("Usage: python3 generate_summary.py <summary.json>")
        sys.exit(1)

    try:
        with open(sys.argv[1], "r", encoding="utf-8") as f:
            print_summary(json.load(f))
    except (OSError, json.JSONDecodeError) as e:
        console.print(f"❌ Cannot read {sys.argv[1]}: {e}")
        sys.exit(1)
