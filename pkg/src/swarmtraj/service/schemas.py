"""Request/response models mirroring the scenario and report JSON formats.

The wire format is the same JSON the CLI reads and writes; semantic
validation is delegated to the core converters so the file format and the
HTTP API cannot drift apart.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field, model_validator

from ..problem import (
    DEFAULT_DEGREE,
    DEFAULT_DURATION,
    DEFAULT_NUM_SAMPLES,
    DEFAULT_Z_PLANE,
    ProblemSpec,
    generate_hallway,
    generate_random,
    generate_random_with_obstacles,
    generate_square,
    spec_from_dict,
    spec_to_dict,
)
from ..solver import SolverConfig


class BoundaryStateModel(BaseModel):
    position: list[float] = Field(min_length=3, max_length=3)
    velocity: list[float] = Field(default=[0.0, 0.0, 0.0], min_length=3, max_length=3)
    acceleration: list[float] = Field(default=[0.0, 0.0, 0.0], min_length=3, max_length=3)


class ObstacleModel(BaseModel):
    center: list[float] = Field(min_length=3, max_length=3)
    radius: float = Field(gt=0)


class ScenarioModel(BaseModel):
    """One problem instance in the scenario JSON schema.

    Plain [x, y, z] entries are accepted in start/goal as shorthand for a
    boundary state at rest.
    """

    n: int | None = None
    duration: float = DEFAULT_DURATION
    m: int = DEFAULT_NUM_SAMPLES
    degree: int = DEFAULT_DEGREE
    basis: str = "bernstein"
    radius: float | None = None
    l_xy: float | None = None
    l_z: float | None = None
    start: list[BoundaryStateModel]
    goal: list[BoundaryStateModel]
    obstacles: list[ObstacleModel] = Field(default_factory=list)
    seed: int | None = None

    @model_validator(mode="before")
    @classmethod
    def _accept_bare_positions(cls, data):
        if isinstance(data, dict):
            for key in ("start", "goal"):
                entries = data.get(key)
                if isinstance(entries, list):
                    data[key] = [
                        {"position": e} if isinstance(e, (list, tuple)) else e for e in entries
                    ]
        return data

    def to_spec(self) -> ProblemSpec:
        return spec_from_dict(self.model_dump(exclude_none=True))

    @classmethod
    def from_spec(cls, spec: ProblemSpec) -> "ScenarioModel":
        return cls.model_validate(spec_to_dict(spec))


class SolverSettingsModel(BaseModel):
    max_iters: int = Field(default=150, ge=1)
    tolerance: float = Field(default=1e-2, gt=0)
    rho_initial: float = Field(default=1.0, gt=0)
    rho_growth: float = Field(default=2.0, gt=1)
    rho_stages: int = Field(default=10, ge=1)

    def to_config(self) -> SolverConfig:
        return SolverConfig(
            max_iters=self.max_iters,
            tolerance=self.tolerance,
            rho_initial=self.rho_initial,
            rho_growth=self.rho_growth,
            rho_stages=self.rho_stages,
        )


class GenerateRequest(BaseModel):
    """Parameters for one benchmark scenario generator."""

    generator: Literal["square", "random", "random-obstacles", "hallway"]
    n: int = 8
    radius: float = 0.4
    side: float = 8.0
    z_plane: float = DEFAULT_Z_PLANE
    box: list[float] = Field(default=[8.0, 8.0, 3.0], min_length=3, max_length=3)
    n_obs: int = 0
    obs_radius: float = 0.5
    hallway_length: float = 20.0
    hallway_width: float = 4.0
    seed: int = 0
    m: int = DEFAULT_NUM_SAMPLES
    degree: int = DEFAULT_DEGREE
    duration: float = DEFAULT_DURATION

    def to_spec(self) -> ProblemSpec:
        common = dict(num_samples=self.m, degree=self.degree, duration=self.duration)
        if self.generator == "square":
            return generate_square(self.n, self.side, self.radius, self.z_plane, **common)
        if self.generator == "random":
            return generate_random(self.n, tuple(self.box), self.radius, self.seed, **common)
        if self.generator == "random-obstacles":
            return generate_random_with_obstacles(
                self.n, tuple(self.box), self.radius, self.n_obs, self.obs_radius, self.seed, **common
            )
        return generate_hallway(
            self.n, self.hallway_length, self.hallway_width, self.radius, z_plane=self.z_plane, **common
        )


class ValidateResponse(BaseModel):
    valid: bool
    violations: list[str]


class SolveRequest(BaseModel):
    scenario: ScenarioModel
    settings: SolverSettingsModel = Field(default_factory=SolverSettingsModel)
    include_trajectories: bool = True


class TimingsModel(BaseModel):
    assembly_s: float
    factorization_s: float
    loop_s: float
    per_iteration_s: float
    total_s: float


class MetricsModel(BaseModel):
    min_normalized_distance: float | None
    num_collision_violations: int
    arc_length: list[float]
    smoothness: list[float]
    mean_arc_length: float
    mean_smoothness: float


class CacheStatsModel(BaseModel):
    entries: int
    factorizations: int
    hits: int
    misses: int
    solves: int


class SolveResponse(BaseModel):
    converged: bool
    iterations: int
    residual_norm: float
    residual_max_abs: float
    residual_norm_history: list[float]
    residual_max_history: list[float]
    boundary_max_history: list[float]
    timings: TimingsModel
    metrics: MetricsModel
    cache_stats: CacheStatsModel
    times: list[float] | None = None
    trajectories: list[list[list[float]]] | None = None


class CacheBuildRequest(BaseModel):
    n: int = Field(ge=1)
    m: int = Field(default=DEFAULT_NUM_SAMPLES, ge=2)
    degree: int = Field(default=DEFAULT_DEGREE, ge=5)
    n_obs: int = Field(default=0, ge=0)
    duration: float = Field(default=DEFAULT_DURATION, gt=0)
    basis: str = "bernstein"
    rho_initial: float = Field(default=1.0, gt=0)
    rho_growth: float = Field(default=2.0, gt=1)
    rho_stages: int = Field(default=10, ge=1)
    max_iters: int = Field(default=150, ge=1)


class CacheBuildResponse(BaseModel):
    fingerprint: str
    rho_values: list[float]
    kkt_dimension: int
    entries: int
    build_time_s: float
    bytes: int | None = None


class HealthResponse(BaseModel):
    status: str
    version: str
    cache: CacheStatsModel
