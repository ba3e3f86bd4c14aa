"""Command-line entry point: estimate | simulate | validate | propensity.

Exit codes: 0 success, 1 validation failure, 2 input error.  All reports
are written to --out; figures are rendered next to the delimited output
unless --no-figures is given.
"""

from __future__ import annotations

import pathlib
import sys

import click
import numpy as np

from . import figures, report as report_mod
from .design import Design
from .exposure import compute_exposure
from .ingest import InputError, ingest, load_config, moment_budget, solver_config
from .interval import combined_interval, gershgorin_majorizer, refine_majorizer
from .propensity import ExposureMomentEngine, build_moment_matrix, build_propensities
from .sim import SimConfig, run_consistency, run_coverage, run_normality
from .statistic import build_weights, point_estimate
from .validate import run_battery, summarize

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_INPUT = 2


@click.group()
def main():
    """Estimate how widespread indirect treatment effects are."""


def _data_options(fn):
    fn = click.option("--units", "units_path", required=True, type=click.Path(), help="units CSV")(fn)
    fn = click.option("--edges", "edges_path", required=True, type=click.Path(), help="edges CSV")(fn)
    fn = click.option("--config", "config_path", required=True, type=click.Path(), help="YAML config")(fn)
    return fn


def _common_options(fn):
    fn = click.option("--out", "out_path", required=True, type=click.Path(), help="output path (JSON report)")(fn)
    fn = click.option("--seed", type=int, default=None, help="override the config seed")(fn)
    fn = click.option("--threads", type=int, default=1, show_default=True,
                      help="worker cap; never changes results")(fn)
    fn = click.option("--alpha", "alphas", type=float, multiple=True,
                      help="one-sided miscoverage alpha (repeatable; level is 1-2*alpha)")(fn)
    fn = click.option("--figures/--no-figures", "render_figures", default=True,
                      show_default=True, help="render PNG figures beside the report")(fn)
    return fn


@main.command()
@_data_options
@_common_options
def estimate(units_path, edges_path, config_path, out_path, seed, threads, alphas, render_figures):
    """Point estimate and one-sided lower bounds from experiment data."""
    try:
        dataset, design, spec, config = ingest(units_path, edges_path, config_path)
    except InputError as exc:
        click.echo(f"input error: {exc}", err=True)
        sys.exit(EXIT_INPUT)
    if seed is not None:
        config["seed"] = int(seed)
    if alphas:
        config["alphas"] = [float(a) for a in alphas]
    try:
        payload = _run_estimate(dataset, design, spec, config)
    except ValueError as exc:
        click.echo(f"input error: {exc}", err=True)
        sys.exit(EXIT_INPUT)
    report_mod.write_json(payload, out_path)
    if render_figures:
        figures.estimate_figure(payload, _figure_path(out_path))
    click.echo(f"report written to {out_path}")


def _run_estimate(dataset, design, spec, config) -> dict:
    budget = moment_budget(config)
    cfg = solver_config(config)
    engine = ExposureMomentEngine(design, dataset.graph, spec)
    table = build_propensities(
        design, dataset.graph, spec,
        positivity_floor=float(config["positivity_floor"]),
        budget=budget, engine=engine,
    )
    x = dataset.treatment
    w = compute_exposure(dataset.graph, spec, x)
    weights = build_weights(config["statistic"]["variant"], w, table, x)
    mm = build_moment_matrix(
        design, dataset.graph, spec, table, weights, x, budget=budget, engine=engine
    )
    majorizer = refine_majorizer(mm.q, gershgorin_majorizer(mm.q, cfg), cfg)
    y = dataset.outcome.astype(np.float64)
    point = point_estimate(weights, y)
    bounds = []
    for alpha in config["alphas"]:
        res = combined_interval(weights, mm.q, y, float(alpha), cfg=cfg, majorizer=majorizer)
        bounds.append(res.report_fields())
    return report_mod.estimate_report(
        dataset, config, w, point, bounds, table.summary(), mm.summary()
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="YAML config with a simulate section")
@_common_options
def simulate(config_path, out_path, seed, threads, alphas, render_figures):
    """Monte Carlo experiments: coverage, normality, or estimator scaling."""
    try:
        config = load_config(config_path)
        sim_section = dict(config.get("simulate") or {})
        kind = sim_section.pop("kind", "coverage")
        if seed is not None:
            sim_section["seed"] = int(seed)
        elif "seed" not in sim_section:
            sim_section["seed"] = int(config["seed"])
        if alphas:
            sim_section["alphas"] = [float(a) for a in alphas]
        sim_cfg = _sim_config(sim_section, threads)
    except (InputError, TypeError, ValueError) as exc:
        click.echo(f"input error: {exc}", err=True)
        sys.exit(EXIT_INPUT)
    runner = {
        "coverage": run_coverage,
        "normality": run_normality,
        "consistency": run_consistency,
    }.get(kind)
    if runner is None:
        click.echo(f"input error: unknown simulate kind {kind!r}", err=True)
        sys.exit(EXIT_INPUT)
    sim_report = runner(sim_cfg)
    payload = report_mod.simulation_report(sim_report, threads)
    report_mod.write_json(payload, out_path)
    report_mod.write_rows_csv(sim_report.rows, _with_suffix(out_path, ".csv"))
    if render_figures:
        figures.simulation_figure(payload, _figure_path(out_path))
    click.echo(f"report written to {out_path}")


def _sim_config(section: dict, threads: int) -> SimConfig:
    from .interval import SolverConfig

    solver_overrides = section.pop("solver", {})
    solver = SolverConfig(
        objective_tol=float(solver_overrides.get("objective_tol", 0.25)),
        refine_iterations=int(solver_overrides.get("refine_iterations", 8)),
        **{
            k: v
            for k, v in solver_overrides.items()
            if k not in ("objective_tol", "refine_iterations")
        },
    )
    fields = dict(section)
    for key in ("n_grid", "alphas"):
        if key in fields:
            fields[key] = tuple(fields[key])
    return SimConfig(threads=threads, solver=solver, **fields)


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="optional YAML config (validate section)")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--instances", type=int, default=6, show_default=True, help="random instances")
@click.option("--n-units", type=int, default=10, show_default=True)
@click.option("--mc-replications", type=int, default=4000, show_default=True)
@click.option("--inject-propensity-error", type=float, default=0.0, hidden=True,
              help="test hook: bias exact propensities to prove the battery detects it")
@click.option("--threads", type=int, default=1, show_default=True)
def validate(config_path, seed, instances, n_units, mc_replications,
             inject_propensity_error, threads):
    """Cross-check the exact engines against brute-force enumeration."""
    if config_path is not None:
        try:
            config = load_config(config_path)
        except InputError as exc:
            click.echo(f"input error: {exc}", err=True)
            sys.exit(EXIT_INPUT)
        section = config.get("validate") or {}
        seed = int(section.get("seed", seed))
        instances = int(section.get("instances", instances))
        n_units = int(section.get("n_units", n_units))
        mc_replications = int(section.get("mc_replications", mc_replications))
    results = run_battery(
        n_instances=instances,
        n_units=n_units,
        seed=seed,
        mc_replications=mc_replications,
        perturb_propensity=inject_propensity_error,
    )
    text, ok = summarize(results)
    click.echo(text)
    sys.exit(EXIT_OK if ok else EXIT_VALIDATION)


@main.command()
@_data_options
@click.option("--out", "out_path", required=True, type=click.Path(), help="propensity CSV path")
@click.option("--dump-moments", "moments_path", type=click.Path(), default=None,
              help="also dump the pairwise moment matrix as CSV")
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=1, show_default=True)
def propensity(units_path, edges_path, config_path, out_path, moments_path, seed, threads):
    """Audit dump of exposure propensities (and optionally the moment matrix)."""
    try:
        dataset, design, spec, config = ingest(units_path, edges_path, config_path)
    except InputError as exc:
        click.echo(f"input error: {exc}", err=True)
        sys.exit(EXIT_INPUT)
    if seed is not None:
        config["seed"] = int(seed)
    budget = moment_budget(config)
    engine = ExposureMomentEngine(design, dataset.graph, spec)
    table = build_propensities(
        design, dataset.graph, spec,
        positivity_floor=float(config["positivity_floor"]),
        budget=budget, engine=engine,
    )
    report_mod.write_propensity_csv(dataset, table, out_path)
    if moments_path is not None:
        x = dataset.treatment
        w = compute_exposure(dataset.graph, spec, x)
        weights = build_weights(config["statistic"]["variant"], w, table, x)
        mm = build_moment_matrix(
            design, dataset.graph, spec, table, weights, x, budget=budget, engine=engine
        )
        report_mod.write_moment_csv(mm.q, moments_path)
    click.echo(f"propensities written to {out_path}")


def _figure_path(out_path) -> pathlib.Path:
    p = pathlib.Path(out_path)
    return p.with_suffix(".png")


def _with_suffix(out_path, suffix) -> pathlib.Path:
    p = pathlib.Path(out_path)
    return p.with_suffix(suffix)


if __name__ == "__main__":
    main()
