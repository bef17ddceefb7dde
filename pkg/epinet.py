#!/usr/bin/env python3
"""
epinet
Networked epidemic simulation and intervention design from mobility data.

Simulates the base and quarantine (SIQR) models over a travel network and
computes optimal travel-rate reductions and quarantine rates for a scenario.
"""

import json
import sys
from pathlib import Path
from typing import Optional

import click
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from config_parser import get_value, load_config, load_scenario, parse_config
from errors import EpinetError
from generate_summary import print_summary, write_json
from log_setup import get_logger, setup_logging
from mobility import check_strong_connectivity
from model_core import validate_params
from quarantine_opt import feasibility_check, optimal_quarantine, pdgd_quarantine
from scenario_runner import prepare, run_scenario, stage
from travel_opt import TravelSolveOptions, solve_budgets

console = Console()
logger = get_logger(__name__)


def _fail(exc: EpinetError):
    console.print(f"❌ {escape(str(exc))}")
    sys.exit(exc.exit_code)


def _scenario(ctx, scenario: str, out: Optional[str] = None):
    config = load_scenario(scenario)
    return config.with_overrides(seed=ctx.obj.get("seed"), output_dir=out)


@click.group(invoke_without_command=True)
@click.option("--verbose", "-v", is_flag=True, help="Debug logging from every module")
@click.option("--threads", type=click.IntRange(min=1), default=None,
              help="Worker threads for budget sweeps and simulations")
@click.option("--seed", type=click.IntRange(min=0), default=None,
              help="Seed for random comparison policies (overrides the scenario)")
@click.pass_context
def cli(ctx, verbose, threads, seed):
    """epinet

    Networked epidemic simulation with optimal travel and quarantine policies.
    """
    ctx.ensure_object(dict)
    ctx.obj.update(verbose=verbose, threads=threads, seed=seed)
    setup_logging(verbose)
    if ctx.invoked_subcommand is None:
        console.print("📋 Available commands:")
        console.print(ctx.get_help())


@cli.command()
@click.argument("scenario", type=click.Path(dir_okay=False))
@click.option("--out", "-o", help="Output directory (overrides output_dir)")
@click.option("--json", "output_json", is_flag=True, help="Print the summary as JSON")
@click.pass_context
def run(ctx, scenario, out, output_json):
    """Run a full scenario and write trajectories, aggregates and summary.json"""
    try:
        config = _scenario(ctx, scenario, out)
        logger.info(f"loaded scenario {config.name} from {scenario}")
        if not output_json:
            console.print(f"🚀 Running scenario '{config.name}' "
                          f"({len(config.policies)} policies, {len(config.budgets)} budgets)")
        result = run_scenario(config, max_workers=ctx.obj["threads"])
    except EpinetError as exc:
        _fail(exc)

    if output_json:
        click.echo(json.dumps(result.summary, indent=2, sort_keys=True, default=str))
        return
    print_summary(result.summary)
    console.print(f"\n✅ Wrote {len(result.written)} files")
    console.print(f"📁 Location: {config.output_dir}")


@cli.command("travel-opt")
@click.argument("scenario", type=click.Path(dir_okay=False))
@click.option("--budget", "-b", "budgets", type=float, multiple=True,
              help="l1 budget on travel-rate changes (repeatable; default: scenario budgets)")
@click.option("--out", "-o", type=click.Path(dir_okay=False), help="Write the solution JSON here")
@click.option("--json", "output_json", is_flag=True, help="Print the solution as JSON")
@click.pass_context
def travel_opt(ctx, scenario, budgets, out, output_json):
    """Minimize the dominant eigenvalue over travel rates within an l1 budget"""
    try:
        config = _scenario(ctx, scenario)
        budgets = sorted(budgets) if budgets else list(config.budgets)
        if not budgets:
            budgets = [0.0]
        net, params, state0, _ = prepare(config)
        with stage("travel-opt"):
            solutions = solve_budgets(net, state0.s, params, budgets,
                                      TravelSolveOptions(**config.travel), ctx.obj["threads"])
    except EpinetError as exc:
        _fail(exc)

    payload = [solutions[b].to_dict(net.n) for b in sorted(solutions)]
    payload = payload[0] if len(payload) == 1 else payload
    if out:
        write_json(payload if isinstance(payload, dict) else {"solutions": payload}, Path(out))
    if output_json:
        click.echo(json.dumps(payload, indent=2, default=str))
        return

    table = Table(title="🚆 Travel-rate optimization", expand=False)
    table.add_column("Budget", style="cyan", justify="right")
    table.add_column("f*", style="yellow", justify="right")
    table.add_column("Iterations", justify="right")
    table.add_column("Status", style="green")
    for b in sorted(solutions):
        solution = solutions[b]
        status = "✅ converged" if solution.trace.converged else f"⚠️  {solution.trace.message}"
        table.add_row(f"{b:g}", f"{solution.f_star:.6f}", str(solution.iterations), status)
    console.print(table)
    if out:
        console.print(f"📁 Solution: {out}")


@cli.command("quarantine-opt")
@click.argument("scenario", type=click.Path(dir_okay=False))
@click.option("--alpha", type=float, default=None, help="Required decay rate (default: scenario alpha)")
@click.option("--method", type=click.Choice(["balance", "pdgd"]), default=None,
              help="Solution path (default: scenario quarantine_method)")
@click.option("--out", "-o", type=click.Path(dir_okay=False), help="Write the solution JSON here")
@click.option("--json", "output_json", is_flag=True, help="Print the solution as JSON")
@click.pass_context
def quarantine_opt(ctx, scenario, alpha, method, out, output_json):
    """Cost-minimal quarantine rates meeting lambda_max <= -alpha"""
    try:
        config = _scenario(ctx, scenario)
        alpha = config.alpha if alpha is None else alpha
        method = method or config.quarantine_method
        net, params, state0, costs = prepare(config)
        with stage("quarantine-opt"):
            if method == "pdgd":
                solution = pdgd_quarantine(state0.s, net.flow, params, alpha, costs, **config.pdgd)
            else:
                solution = optimal_quarantine(state0.s, net.flow, params, alpha, costs)
    except EpinetError as exc:
        _fail(exc)

    payload = solution.to_dict()
    if out:
        write_json(payload, Path(out))
    if output_json:
        click.echo(json.dumps(payload, indent=2, default=str))
        return

    table = Table(title=f"🛡️  Optimal quarantine ({method}, alpha={alpha:g})", expand=False)
    table.add_column("Node", style="cyan")
    table.add_column("q_a", justify="right")
    table.add_column("q_s", justify="right")
    for node, q_a, q_s in zip(net.nodes, solution.policy.q_a, solution.policy.q_s):
        table.add_row(str(node), f"{q_a:.4f}", f"{q_s:.4f}")
    console.print(table)
    console.print(f"📊 Cost {solution.cost:.6g}, lambda_max {solution.lambda_max:.8f}")
    if out:
        console.print(f"📁 Solution: {out}")


def _check_rows(scenario: str, raw):
    """Yield (check, ok, detail) rows, stopping at the first failing stage"""
    config = parse_config(raw, Path(scenario).parent)
    yield "configuration", True, f"{len(config.policies)} policies, {len(config.budgets)} budgets"

    net, params, state0, _ = prepare(config)
    yield "input tables", True, f"{net.n} nodes"
    yield "strong connectivity", bool(check_strong_connectivity(net.flow)), "infection-flow digraph"
    report = validate_params(params, net)
    yield "model invariants", report.ok, "; ".join(report.violations) or f"beta_s={params.beta_s:.6g}"
    feasibility = feasibility_check(state0.s, net.flow, params, config.alpha)
    detail = "; ".join(feasibility.reasons) or (
        f"alpha={config.alpha:.4g} < {min(feasibility.alpha_bound_rate, feasibility.alpha_bound_spectral):.4g}")
    yield "quarantine feasibility", feasibility.feasible, "; ".join([detail, *feasibility.notes])


@cli.command()
@click.argument("scenario", type=click.Path(dir_okay=False))
@click.option("--get", "path", help="Print one configuration value using dot notation")
@click.option("--json", "output_json", is_flag=True, help="Output as JSON")
def validate(scenario, path, output_json):
    """Check a scenario and its input data without running it"""
    try:
        raw = load_config(scenario)
        if path:
            value = get_value(raw, path)
            click.echo(json.dumps(value) if isinstance(value, (dict, list)) else str(value))
            return
        rows = list(_check_rows(scenario, raw))
    except EpinetError as exc:
        _fail(exc)

    if output_json:
        click.echo(json.dumps([{"check": c, "ok": ok, "detail": d} for c, ok, d in rows],
                              indent=2, default=str))
    else:
        table = Table(title="🔍 Scenario validation", expand=False)
        table.add_column("Check", style="cyan")
        table.add_column("Status", style="green")
        table.add_column("Detail", style="dim")
        for check, ok, detail in rows:
            table.add_row(check, "✅ OK" if ok else "⚠️  Warning", escape(detail))
        console.print(table)
    if all(ok for _, ok, _ in rows):
        if not output_json:
            console.print("✅ Scenario is valid")
    elif not output_json:
        console.print("💡 Warnings do not block 'run'; infeasible quarantine problems fail there")


if __name__ == "__main__":
    cli()
