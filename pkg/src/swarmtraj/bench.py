"""Benchmark suites: batches of scenarios solved with a shared factor cache.

Runs a generator family across sizes and seeds, records per-run outcomes
and residual histories, and writes plot-ready CSV tables.  Runs sharing a
fingerprint reuse factorizations, so a suite demonstrates the setup/solve
cost split the optimizer is built around.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .kkt_cache import FactorCache
from .service.schemas import GenerateRequest, SolverSettingsModel
from .solver import am_solve

log = logging.getLogger(__name__)

SUITES = ("square", "random", "random-obstacles", "hallway")

RESULT_COLUMNS = [
    "n",
    "n_obs",
    "seed",
    "converged",
    "iterations",
    "final_residual",
    "min_norm_dist",
    "mean_arc_length",
    "mean_smoothness",
    "setup_time_s",
    "loop_time_s",
    "suite",
    "per_iteration_s",
    "error",
]


@dataclass
class BenchRun:
    """Outcome of one scenario solve inside a suite."""

    suite: str
    n: int
    n_obs: int
    seed: int
    converged: bool = False
    iterations: int = 0
    final_residual: float = float("nan")
    min_norm_dist: float | None = None
    mean_arc_length: float | None = None
    mean_smoothness: float | None = None
    setup_time_s: float = 0.0
    loop_time_s: float = 0.0
    per_iteration_s: float = 0.0
    error: str | None = None
    residual_norm_history: list[float] = field(default_factory=list)
    residual_max_history: list[float] = field(default_factory=list)

    def row(self) -> dict:
        return {
            "n": self.n,
            "n_obs": self.n_obs,
            "seed": self.seed,
            "converged": self.converged,
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "min_norm_dist": self.min_norm_dist,
            "mean_arc_length": self.mean_arc_length,
            "mean_smoothness": self.mean_smoothness,
            "setup_time_s": self.setup_time_s,
            "loop_time_s": self.loop_time_s,
            "suite": self.suite,
            "per_iteration_s": self.per_iteration_s,
            "error": self.error or "",
        }


def _one_run(
    suite: str,
    n: int,
    n_obs: int,
    seed: int,
    settings: SolverSettingsModel,
    generator: GenerateRequest,
    cache: FactorCache,
) -> BenchRun:
    run = BenchRun(suite=suite, n=n, n_obs=n_obs, seed=seed)
    try:
        req = generator.model_copy(update={"generator": suite, "n": n, "n_obs": n_obs, "seed": seed})
        spec = req.to_spec()
        report = am_solve(spec, settings.to_config(), cache=cache)
    except Exception as exc:  # recorded, suite continues
        log.warning("bench run %s n=%d n_obs=%d seed=%d failed: %s", suite, n, n_obs, seed, exc)
        run.error = str(exc)
        return run
    run.converged = report.converged
    run.iterations = report.iterations
    run.final_residual = report.residual_max_abs
    run.min_norm_dist = report.metrics["min_normalized_distance"]
    run.mean_arc_length = report.metrics["mean_arc_length"]
    run.mean_smoothness = report.metrics["mean_smoothness"]
    run.setup_time_s = report.timings["assembly_s"] + report.timings["factorization_s"]
    run.loop_time_s = report.timings["loop_s"]
    run.per_iteration_s = report.timings["per_iteration_s"]
    run.residual_norm_history = report.residual_norm_history
    run.residual_max_history = report.residual_max_history
    return run


def run_suite(
    suite: str,
    sizes: list[int],
    seeds: list[int],
    n_obs_list: list[int] | None = None,
    settings: SolverSettingsModel | None = None,
    generator: GenerateRequest | None = None,
    jobs: int = 1,
    cache: FactorCache | None = None,
) -> list[BenchRun]:
    """Solve every (size, n_obs, seed) combination of one suite.

    Individual failures are recorded as error rows and the suite
    continues.  Results come back sorted regardless of jobs, and all runs
    share one factorization cache.
    """
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}, expected one of {SUITES}")
    if not sizes:
        raise ValueError("sizes must not be empty")
    if not seeds:
        raise ValueError("seeds must not be empty")
    obs_counts = n_obs_list if n_obs_list else [0]
    if suite != "random-obstacles":
        obs_counts = [0]
    settings = settings or SolverSettingsModel()
    generator = generator or GenerateRequest(generator=suite)
    cache = cache if cache is not None else FactorCache()

    combos = [(n, k, s) for n in sizes for k in obs_counts for s in seeds]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            runs = list(
                pool.map(lambda c: _one_run(suite, c[0], c[1], c[2], settings, generator, cache), combos)
            )
    else:
        runs = [_one_run(suite, n, k, s, settings, generator, cache) for n, k, s in combos]
    runs.sort(key=lambda r: (r.n, r.n_obs, r.seed))
    return runs


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_results_csv(runs: list[BenchRun], path: str | os.PathLike) -> None:
    path = Path(path)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=RESULT_COLUMNS)
    writer.writeheader()
    for run in runs:
        writer.writerow(run.row())
    _atomic_write(path, buf.getvalue())


def write_residuals_csv(runs: list[BenchRun], path: str | os.PathLike) -> None:
    """Per-iteration residual trajectories, one row per (run, iteration)."""
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["suite", "n", "n_obs", "seed", "iteration", "residual_norm", "residual_max"])
    for run in runs:
        for it, (norm, mx) in enumerate(zip(run.residual_norm_history, run.residual_max_history)):
            writer.writerow([run.suite, run.n, run.n_obs, run.seed, it + 1, norm, mx])
    _atomic_write(path, buf.getvalue())


def summarize(runs: list[BenchRun]) -> dict:
    """Aggregate statistics per (suite, n, n_obs) group."""
    groups: dict[tuple, list[BenchRun]] = {}
    for run in runs:
        groups.setdefault((run.suite, run.n, run.n_obs), []).append(run)
    summary = []
    for (suite, n, n_obs), members in sorted(groups.items()):
        solved = [r for r in members if r.error is None]
        entry = {
            "suite": suite,
            "n": n,
            "n_obs": n_obs,
            "runs": len(members),
            "errors": sum(1 for r in members if r.error is not None),
            "convergence_rate": (
                sum(1 for r in solved if r.converged) / len(solved) if solved else 0.0
            ),
        }
        if solved:
            entry["mean_iterations"] = statistics.mean(r.iterations for r in solved)
            entry["mean_loop_time_s"] = statistics.mean(r.loop_time_s for r in solved)
            entry["mean_per_iteration_s"] = statistics.mean(r.per_iteration_s for r in solved)
            entry["mean_final_residual"] = statistics.mean(r.final_residual for r in solved)
        summary.append(entry)
    return {"generated_at": time.strftime("%Y-%m-%dT%H:%M:%S"), "groups": summary}


def write_summary_json(runs: list[BenchRun], path: str | os.PathLike) -> None:
    _atomic_write(Path(path), json.dumps(summarize(runs), indent=2) + "\n")
