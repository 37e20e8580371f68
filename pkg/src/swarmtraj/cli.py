"""Command-line interface.

The CLI is a thin client of the service layer: it translates flags into
the same request models the HTTP API consumes, runs them in process by
default, or forwards them to a running server with --server.  Exit codes
for `solve`: 0 converged and collision-free, 1 invalid instance, 2 solver
did not converge (report still written), 3 I/O errors.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import click

from . import __version__
from .bench import SUITES, run_suite, write_results_csv, write_residuals_csv, write_summary_json
from .kkt_cache import FactorCache, assemble_for_dimensions, build_rho_schedule
from .problem import ProblemSpec, load_scenario, validate
from .service.client import ServiceClient, ServiceError
from .service.schemas import (
    CacheBuildRequest,
    CacheBuildResponse,
    GenerateRequest,
    ScenarioModel,
    SolveRequest,
    SolveResponse,
    SolverSettingsModel,
)
from .solver import InfeasibleProblemError, am_solve

log = logging.getLogger(__name__)

CACHE_DIR_ENV = "SWARMTRAJ_CACHE_DIR"

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NOT_CONVERGED = 2
EXIT_IO = 3

# Exit-code contract: a converged solve must also clear this margin on the
# independently checked normalized pairwise distance.
COLLISION_PASS_MARGIN = 0.95


def _solver_options(fn):
    fn = click.option("--max-iters", default=150, show_default=True, help="Iteration budget.")(fn)
    fn = click.option("--tol", default=1e-2, show_default=True, help="Max-abs residual tolerance (m).")(fn)
    fn = click.option("--rho0", default=1.0, show_default=True, help="Initial penalty weight.")(fn)
    fn = click.option("--rho-growth", default=2.0, show_default=True, help="Penalty growth per stage.")(fn)
    fn = click.option("--rho-stages", default=10, show_default=True, help="Number of penalty stages.")(fn)
    return fn


def _discretization_options(fn):
    fn = click.option("--m", "num_samples", default=None, type=int, help="Samples on the time grid.")(fn)
    fn = click.option("--degree", default=None, type=int, help="Polynomial degree.")(fn)
    fn = click.option("--duration", default=None, type=float, help="Traversal time (s).")(fn)
    fn = click.option(
        "--basis", default=None, type=click.Choice(["bernstein", "monomial"]), help="Basis family."
    )(fn)
    return fn


def _generator_options(fn):
    fn = click.option("--n", default=8, show_default=True, help="Agent count.")(fn)
    fn = click.option("--radius", default=0.4, show_default=True, help="Agent radius (m).")(fn)
    fn = click.option("--side", default=8.0, show_default=True, help="Square side (m).")(fn)
    fn = click.option("--z-plane", default=1.0, show_default=True, help="Placement altitude (m).")(fn)
    fn = click.option("--box", nargs=3, type=float, default=(8.0, 8.0, 3.0), show_default=True,
                      help="Random-suite box (m).")(fn)
    fn = click.option("--n-obs", default=0, show_default=True, help="Obstacle count.")(fn)
    fn = click.option("--obs-radius", default=0.5, show_default=True, help="Obstacle radius (m).")(fn)
    fn = click.option("--length", "hallway_length", default=20.0, show_default=True,
                      help="Hallway length (m).")(fn)
    fn = click.option("--width", "hallway_width", default=4.0, show_default=True,
                      help="Hallway width (m).")(fn)
    fn = click.option("--seed", default=0, show_default=True, help="Generator seed.")(fn)
    return fn


def _settings(max_iters, tol, rho0, rho_growth, rho_stages) -> SolverSettingsModel:
    return SolverSettingsModel(
        max_iters=max_iters,
        tolerance=tol,
        rho_initial=rho0,
        rho_growth=rho_growth,
        rho_stages=rho_stages,
    )


def _apply_discretization(spec: ProblemSpec, num_samples, degree, duration, basis) -> ProblemSpec:
    updates = {}
    if num_samples is not None:
        updates["num_samples"] = num_samples
    if degree is not None:
        updates["degree"] = degree
    if duration is not None:
        updates["duration"] = duration
    if basis is not None:
        updates["basis_kind"] = basis
    return dataclasses.replace(spec, **updates) if updates else spec


def _write_report(doc: dict, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.json"
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(doc, indent=2) + "\n")
    os.replace(tmp, path)
    return path


def _write_trajectory_csvs(times, trajectories, out_dir: Path) -> list[Path]:
    paths = []
    for i, agent in enumerate(trajectories):
        path = out_dir / f"agent_{i:02d}.csv"
        tmp = path.with_suffix(".csv.tmp")
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "x", "y", "z"])
            for t, (x, y, z) in zip(times, agent):
                writer.writerow([t, x, y, z])
        os.replace(tmp, path)
        paths.append(path)
    return paths


@click.group()
@click.version_option(version=__version__)
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool):
    """Joint multi-agent trajectory optimization."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


@main.command()
@click.option("--scenario", "scenario_path", type=str, default=None, help="Scenario JSON file.")
@click.option("--generator", type=click.Choice(list(SUITES)), default=None, help="Built-in scenario family.")
@_generator_options
@_discretization_options
@_solver_options
@click.option("--out-dir", default=".", show_default=True, help="Where to write report.json and CSVs.")
@click.option("--cache-dir", default=None, help=f"Factorization cache directory (default ${CACHE_DIR_ENV}).")
@click.option("--csv/--no-csv", "write_csv", default=False, show_default=True,
              help="Write per-agent t,x,y,z CSV files.")
@click.option("--server", default=None, help="Base URL of a running service; solve there instead.")
def solve(scenario_path, generator, n, radius, side, z_plane, box, n_obs, obs_radius,
          hallway_length, hallway_width, seed, num_samples, degree, duration, basis,
          max_iters, tol, rho0, rho_growth, rho_stages, out_dir, cache_dir, write_csv, server):
    """Solve one scenario and write the result report."""
    if (scenario_path is None) == (generator is None):
        raise click.UsageError("provide exactly one of --scenario or --generator")
    settings = _settings(max_iters, tol, rho0, rho_growth, rho_stages)
    out = Path(out_dir)

    # Build the scenario (from file or generator), with discretization overrides.
    try:
        if scenario_path is not None:
            spec = load_scenario(scenario_path)
        else:
            req = GenerateRequest(
                generator=generator, n=n, radius=radius, side=side, z_plane=z_plane,
                box=list(box), n_obs=n_obs, obs_radius=obs_radius,
                hallway_length=hallway_length, hallway_width=hallway_width, seed=seed,
            )
            spec = req.to_spec()
        spec = _apply_discretization(spec, num_samples, degree, duration, basis)
    except (OSError, json.JSONDecodeError) as exc:
        click.echo(f"error: cannot read scenario: {exc}", err=True)
        sys.exit(EXIT_IO)
    except ValueError as exc:
        click.echo(f"error: invalid scenario: {exc}", err=True)
        sys.exit(EXIT_INVALID)

    violations = validate(spec)
    if violations:
        click.echo("error: scenario violates instance invariants:", err=True)
        for v in violations:
            click.echo(f"  - {v}", err=True)
        sys.exit(EXIT_INVALID)

    try:
        if server is not None:
            request = SolveRequest(scenario=ScenarioModel.from_spec(spec), settings=settings)
            with ServiceClient(server) as client:
                response = client.solve(request)
        else:
            cache = FactorCache(disk_dir=cache_dir or os.environ.get(CACHE_DIR_ENV) or None)
            if cache.disk_dir is not None:
                # load-or-build all stages and persist, so the next
                # invocation at this problem shape skips setup entirely
                system = assemble_for_dimensions(
                    spec.num_agents, spec.num_samples, spec.degree,
                    spec.num_obstacles, spec.duration, spec.basis_kind.value,
                )
                schedule = build_rho_schedule(rho0, rho_growth, rho_stages, max_iters)
                cache.persist(system, schedule)
            report = am_solve(spec, settings.to_config(), cache=cache)
            doc = report.to_dict(include_trajectories=True)
            doc["times"] = spec.time_grid().samples.tolist()
            response = SolveResponse(**doc)
    except InfeasibleProblemError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_INVALID)
    except ServiceError as exc:
        if exc.status_code == 422:
            click.echo(f"error: {exc.detail}", err=True)
            sys.exit(EXIT_INVALID)
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_IO)

    try:
        report_path = _write_report(response.model_dump(), out)
        if write_csv and response.trajectories is not None:
            _write_trajectory_csvs(response.times, response.trajectories, out)
    except OSError as exc:
        click.echo(f"error: cannot write outputs: {exc}", err=True)
        sys.exit(EXIT_IO)

    min_dist = response.metrics.min_normalized_distance
    collision_ok = min_dist is None or min_dist >= COLLISION_PASS_MARGIN
    click.echo(
        f"converged={response.converged} iterations={response.iterations} "
        f"residual_max={response.residual_max_abs:.3e} "
        f"min_normalized_distance={'n/a' if min_dist is None else f'{min_dist:.4f}'} "
        f"report={report_path}"
    )
    if response.converged and collision_ok:
        sys.exit(EXIT_OK)
    sys.exit(EXIT_NOT_CONVERGED)


@main.command()
@click.option("--n", required=True, type=int, help="Agent count.")
@click.option("--m", "num_samples", default=100, show_default=True, type=int)
@click.option("--degree", default=10, show_default=True, type=int)
@click.option("--n-obs", default=0, show_default=True, type=int)
@click.option("--duration", default=10.0, show_default=True, type=float)
@click.option("--basis", default="bernstein", type=click.Choice(["bernstein", "monomial"]), show_default=True)
@_solver_options
@click.option("--cache-dir", default=None, help=f"Cache directory (default ${CACHE_DIR_ENV}).")
@click.option("--server", default=None, help="Build the cache of a running service instead.")
def cache(n, num_samples, degree, n_obs, duration, basis, max_iters, tol, rho0, rho_growth,
          rho_stages, cache_dir, server):
    """Pre-build and persist KKT factorizations for a problem shape.

    Later solves matching (n, m, degree, n_obs, basis, duration) load the
    factors instead of recomputing them.
    """
    request = CacheBuildRequest(
        n=n, m=num_samples, degree=degree, n_obs=n_obs, duration=duration, basis=basis,
        rho_initial=rho0, rho_growth=rho_growth, rho_stages=rho_stages, max_iters=max_iters,
    )
    try:
        if server is not None:
            with ServiceClient(server) as client:
                result = client.cache_build(request)
        else:
            directory = cache_dir or os.environ.get(CACHE_DIR_ENV)
            if not directory:
                raise click.UsageError(f"--cache-dir or ${CACHE_DIR_ENV} is required without --server")
            store = FactorCache(disk_dir=directory)
            system = assemble_for_dimensions(n, num_samples, degree, n_obs, duration, basis)
            schedule = build_rho_schedule(rho0, rho_growth, rho_stages, max_iters)
            manifest = store.persist(system, schedule)
            result = CacheBuildResponse(
                fingerprint=manifest["fingerprint"],
                rho_values=manifest["rho_values"],
                kkt_dimension=manifest["kkt_dimension"],
                entries=len(manifest["rho_values"]),
                build_time_s=manifest["build_time_s"],
                bytes=manifest["bytes"],
            )
    except ServiceError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_IO)
    except OSError as exc:
        click.echo(f"error: cannot persist cache: {exc}", err=True)
        sys.exit(EXIT_IO)

    click.echo(
        f"fingerprint={result.fingerprint} stages={len(result.rho_values)} "
        f"kkt_dimension={result.kkt_dimension} "
        f"size={'n/a' if result.bytes is None else f'{result.bytes} bytes'} "
        f"build_time={result.build_time_s:.3f}s"
    )


@main.command()
@click.option("--suite", type=click.Choice(list(SUITES)), required=True)
@click.option("--sizes", required=True, help="Comma-separated agent counts, e.g. 4,8,16.")
@click.option("--seeds", default=5, show_default=True, type=int, help="Seeds per configuration.")
@click.option("--n-obs-list", default=None, help="Comma-separated obstacle counts (obstacle suite).")
@_generator_options
@_discretization_options
@_solver_options
@click.option("--jobs", default=1, show_default=True, type=int, help="Concurrent runs.")
@click.option("--out-dir", default="bench_out", show_default=True)
def bench(suite, sizes, seeds, n_obs_list, n, radius, side, z_plane, box, n_obs, obs_radius,
          hallway_length, hallway_width, seed, num_samples, degree, duration, basis,
          max_iters, tol, rho0, rho_growth, rho_stages, jobs, out_dir):
    """Run a benchmark suite and write aggregate + residual-history CSVs."""
    try:
        size_list = [int(s) for s in sizes.split(",") if s.strip()]
    except ValueError as exc:
        raise click.UsageError(f"cannot parse --sizes {sizes!r}: {exc}") from exc
    if not size_list:
        raise click.UsageError("--sizes must name at least one agent count")
    obs_counts = None
    if n_obs_list:
        obs_counts = [int(s) for s in n_obs_list.split(",") if s.strip()]

    generator = GenerateRequest(
        generator=suite, n=size_list[0], radius=radius, side=side, z_plane=z_plane,
        box=list(box), n_obs=n_obs, obs_radius=obs_radius,
        hallway_length=hallway_length, hallway_width=hallway_width, seed=seed,
        m=num_samples or 100, degree=degree or 10, duration=duration or 10.0,
    )
    settings = _settings(max_iters, tol, rho0, rho_growth, rho_stages)
    runs = run_suite(
        suite,
        sizes=size_list,
        seeds=list(range(seeds)),
        n_obs_list=obs_counts,
        settings=settings,
        generator=generator,
        jobs=jobs,
    )

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_results_csv(runs, out / "results.csv")
        write_residuals_csv(runs, out / "residuals.csv")
        write_summary_json(runs, out / "summary.json")
    except OSError as exc:
        click.echo(f"error: cannot write benchmark outputs: {exc}", err=True)
        sys.exit(EXIT_IO)

    errors = sum(1 for r in runs if r.error is not None)
    converged = sum(1 for r in runs if r.converged)
    click.echo(f"{len(runs)} runs, {converged} converged, {errors} errors -> {out}")
    if errors:
        sys.exit(EXIT_NOT_CONVERGED)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--cache-dir", default=None, help=f"Cache directory (default ${CACHE_DIR_ENV}).")
def serve(host, port, cache_dir):
    """Run the HTTP service."""
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(cache_dir=cache_dir), host=host, port=port)


if __name__ == "__main__":
    main()
