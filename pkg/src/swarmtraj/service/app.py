"""FastAPI service wrapping the solver.

A running service holds one process-wide factorization cache, so repeated
solve requests for the same fleet size and discretization skip the entire
setup phase: the expensive work is paid once, every later request is
matrix-vector products.
"""

from __future__ import annotations

import logging
import os
import time

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..kkt_cache import FactorCache, assemble_for_dimensions, build_rho_schedule
from ..problem import validate
from ..solver import InfeasibleProblemError, am_solve
from .schemas import (
    CacheBuildRequest,
    CacheBuildResponse,
    CacheStatsModel,
    GenerateRequest,
    HealthResponse,
    ScenarioModel,
    SolveRequest,
    SolveResponse,
    ValidateResponse,
)

log = logging.getLogger(__name__)

CACHE_DIR_ENV = "SWARMTRAJ_CACHE_DIR"


def create_app(cache_dir: str | None = None) -> FastAPI:
    """Build the service; cache_dir falls back to $SWARMTRAJ_CACHE_DIR."""
    disk = cache_dir if cache_dir is not None else os.environ.get(CACHE_DIR_ENV) or None
    cache = FactorCache(disk_dir=disk)
    app = FastAPI(
        title="swarmtraj",
        version=__version__,
        description="Joint multi-agent trajectory optimization with cached KKT factorizations",
    )
    app.state.cache = cache

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__, cache=CacheStatsModel(**cache.stats()))

    @app.post("/scenarios/generate", response_model=ScenarioModel)
    def generate(req: GenerateRequest) -> ScenarioModel:
        try:
            spec = req.to_spec()
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return ScenarioModel.from_spec(spec)

    @app.post("/scenarios/validate", response_model=ValidateResponse)
    def validate_scenario(scenario: ScenarioModel) -> ValidateResponse:
        try:
            spec = scenario.to_spec()
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        violations = [str(v) for v in validate(spec)]
        return ValidateResponse(valid=not violations, violations=violations)

    @app.post("/solve", response_model=SolveResponse)
    def solve(req: SolveRequest) -> SolveResponse:
        try:
            spec = req.scenario.to_spec()
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        try:
            report = am_solve(spec, req.settings.to_config(), cache=cache)
        except InfeasibleProblemError as exc:
            raise HTTPException(
                status_code=422,
                detail={"error": "infeasible problem", "violations": [str(v) for v in exc.violations]},
            ) from exc
        doc = report.to_dict(include_trajectories=req.include_trajectories)
        if req.include_trajectories:
            doc["times"] = spec.time_grid().samples.tolist()
        return SolveResponse(**doc)

    @app.post("/cache/build", response_model=CacheBuildResponse)
    def cache_build(req: CacheBuildRequest) -> CacheBuildResponse:
        system = assemble_for_dimensions(
            req.n, req.m, req.degree, req.n_obs, req.duration, req.basis
        )
        schedule = build_rho_schedule(req.rho_initial, req.rho_growth, req.rho_stages, req.max_iters)
        if cache.disk_dir is not None:
            manifest = cache.persist(system, schedule)
            return CacheBuildResponse(
                fingerprint=manifest["fingerprint"],
                rho_values=manifest["rho_values"],
                kkt_dimension=manifest["kkt_dimension"],
                entries=len(schedule.values),
                build_time_s=manifest["build_time_s"],
                bytes=manifest["bytes"],
            )
        t0 = time.perf_counter()
        factors = cache.prefactorize(system, schedule)
        return CacheBuildResponse(
            fingerprint=system.fingerprint.key(),
            rho_values=[f.rho for f in factors],
            kkt_dimension=factors[0]._lu.shape[0],
            entries=len(factors),
            build_time_s=time.perf_counter() - t0,
        )

    @app.get("/cache/stats", response_model=CacheStatsModel)
    def cache_stats() -> CacheStatsModel:
        return CacheStatsModel(**cache.stats())

    return app


app = create_app()
