"""Problem instances: agents, geometry, boundary conditions, obstacles.

A ProblemSpec is everything the solver needs: per-agent start and goal
states, the safety geometry shared by all agent pairs, static obstacles
(as circumscribing spheres), and the discretization (time grid plus basis
configuration).  The module also provides the benchmark scenario
generators (square, random, random with obstacles, hallway) and the JSON
scenario format used by the CLI and the HTTP service.

Safety geometry convention: two agents of physical radius r get pairwise
spheroid semi-axes l_xy = l_z = 2r in sphere mode (their centers may not
come closer than the sum of radii).  An agent against an obstacle of
radius R uses semi-axes l/2 + R, i.e. the agent's own radius plus the
obstacle's.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .basis import BasisKind, TimeGrid, build_time_grid

DEFAULT_NUM_SAMPLES = 100
DEFAULT_DEGREE = 10
DEFAULT_DURATION = 10.0
DEFAULT_Z_PLANE = 1.0

_MAX_REJECTIONS = 10_000


@dataclass(frozen=True)
class AgentGeometry:
    """Pairwise safety spheroid semi-axes (meters)."""

    l_xy: float
    l_z: float

    def __post_init__(self):
        if not (self.l_xy > 0 and self.l_z > 0):
            raise ValueError(f"spheroid semi-axes must be positive, got ({self.l_xy}, {self.l_z})")

    @property
    def is_sphere(self) -> bool:
        return self.l_xy == self.l_z

    @property
    def agent_radius(self) -> float:
        """Physical radius of one agent implied by the pairwise in-plane semi-axis."""
        return self.l_xy / 2.0

    @classmethod
    def sphere_from_radius(cls, radius: float) -> "AgentGeometry":
        if not radius > 0:
            raise ValueError(f"agent radius must be positive, got {radius}")
        return cls(l_xy=2.0 * radius, l_z=2.0 * radius)


@dataclass(frozen=True)
class BoundaryState:
    """Position, velocity and acceleration pinned at one trajectory endpoint."""

    position: tuple[float, float, float]
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    acceleration: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("position", "velocity", "acceleration"):
            vec = getattr(self, name)
            if len(vec) != 3 or not all(math.isfinite(v) for v in vec):
                raise ValueError(f"{name} must be a finite 3-vector, got {vec}")
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))
        object.__setattr__(self, "acceleration", tuple(float(v) for v in self.acceleration))

    @classmethod
    def at_rest(cls, position) -> "BoundaryState":
        x, y, z = position
        return cls(position=(float(x), float(y), float(z)))


@dataclass(frozen=True)
class Obstacle:
    """Static obstacle, reduced to its circumscribing sphere."""

    center: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"obstacle radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))


@dataclass(frozen=True)
class ProblemSpec:
    """A complete joint trajectory optimization instance."""

    start: tuple[BoundaryState, ...]
    goal: tuple[BoundaryState, ...]
    geometry: AgentGeometry
    obstacles: tuple[Obstacle, ...] = ()
    num_samples: int = DEFAULT_NUM_SAMPLES
    degree: int = DEFAULT_DEGREE
    duration: float = DEFAULT_DURATION
    basis_kind: BasisKind = BasisKind.BERNSTEIN
    seed: int | None = None

    def __post_init__(self):
        if len(self.start) < 1:
            raise ValueError("at least one agent is required")
        if len(self.start) != len(self.goal):
            raise ValueError(
                f"start and goal lists must have equal length, got {len(self.start)} vs {len(self.goal)}"
            )
        object.__setattr__(self, "start", tuple(self.start))
        object.__setattr__(self, "goal", tuple(self.goal))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "basis_kind", BasisKind(self.basis_kind))

    @property
    def num_agents(self) -> int:
        return len(self.start)

    @property
    def num_obstacles(self) -> int:
        return len(self.obstacles)

    def time_grid(self) -> TimeGrid:
        return build_time_grid(self.num_samples, self.duration)

    def obstacle_geometry(self, obstacle: Obstacle) -> AgentGeometry:
        """Safety semi-axes between one agent and the given obstacle."""
        return AgentGeometry(
            l_xy=self.geometry.l_xy / 2.0 + obstacle.radius,
            l_z=self.geometry.l_z / 2.0 + obstacle.radius,
        )


@dataclass(frozen=True)
class Violation:
    """One failed instance invariant, naming the offending subject."""

    subject: str
    detail: str

    def __str__(self) -> str:
        return f"{self.subject}: {self.detail}"


def _normalized_separation(p: tuple, q: tuple, geom: AgentGeometry) -> float:
    dx = (p[0] - q[0]) / geom.l_xy
    dy = (p[1] - q[1]) / geom.l_xy
    dz = (p[2] - q[2]) / geom.l_z
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def validate(spec: ProblemSpec) -> list[Violation]:
    """Check instance invariants, reporting (not raising) every violation.

    Pairwise start positions and pairwise goal positions must satisfy the
    spheroid separation (normalized distance >= 1); start and goal
    positions must also clear every obstacle by the agent-obstacle
    separation.
    """
    violations: list[Violation] = []
    n = spec.num_agents
    for label, states in (("start", spec.start), ("goal", spec.goal)):
        for i in range(n):
            for j in range(i + 1, n):
                sep = _normalized_separation(states[i].position, states[j].position, spec.geometry)
                if sep < 1.0:
                    violations.append(
                        Violation(
                            subject=f"{label} pair ({i}, {j})",
                            detail=f"normalized separation {sep:.4f} < 1",
                        )
                    )
        for i in range(n):
            for k, obs in enumerate(spec.obstacles):
                geom = spec.obstacle_geometry(obs)
                sep = _normalized_separation(states[i].position, obs.center, geom)
                if sep < 1.0:
                    violations.append(
                        Violation(
                            subject=f"{label} agent {i} vs obstacle {k}",
                            detail=f"normalized separation {sep:.4f} < 1",
                        )
                    )
    return violations


def _square_perimeter_point(side: float, arclength: float, z: float) -> tuple[float, float, float]:
    """Point at the given arclength along the square perimeter, corner start."""
    s = arclength % (4.0 * side)
    h = side / 2.0
    if s < side:
        return (-h + s, -h, z)
    if s < 2 * side:
        return (h, -h + (s - side), z)
    if s < 3 * side:
        return (h - (s - 2 * side), h, z)
    return (-h, h - (s - 3 * side), z)


def generate_square(
    n: int,
    side: float,
    radius: float,
    z_plane: float = DEFAULT_Z_PLANE,
    *,
    num_samples: int = DEFAULT_NUM_SAMPLES,
    degree: int = DEFAULT_DEGREE,
    duration: float = DEFAULT_DURATION,
) -> ProblemSpec:
    """Agents evenly spaced on a square perimeter, goals at antipodal points.

    Every agent must cross the center region, so all `n choose 2` pairs
    interact.  Boundary velocities and accelerations are zero.
    """
    if n < 2:
        raise ValueError(f"square scenario needs n >= 2, got {n}")
    if not (side > 0 and radius > 0):
        raise ValueError(f"side and radius must be positive, got side={side}, radius={radius}")
    perimeter = 4.0 * side
    spacing = perimeter / n
    starts = []
    goals = []
    for i in range(n):
        s = i * spacing
        starts.append(BoundaryState.at_rest(_square_perimeter_point(side, s, z_plane)))
        goals.append(BoundaryState.at_rest(_square_perimeter_point(side, s + perimeter / 2.0, z_plane)))
    return ProblemSpec(
        start=tuple(starts),
        goal=tuple(goals),
        geometry=AgentGeometry.sphere_from_radius(radius),
        num_samples=num_samples,
        degree=degree,
        duration=duration,
    )


def _sample_positions(
    rng: np.random.Generator,
    n: int,
    box: tuple[float, float, float],
    min_separation: float,
    max_rejections: int,
) -> list[tuple[float, float, float]]:
    """Rejection-sample n points in the box, pairwise at least min_separation apart.

    The box is centered at the origin in x and y; z spans [0, box_z].
    """
    bx, by, bz = box
    placed: list[tuple[float, float, float]] = []
    rejections = 0
    while len(placed) < n:
        cand = (
            float(rng.uniform(-bx / 2.0, bx / 2.0)),
            float(rng.uniform(-by / 2.0, by / 2.0)),
            float(rng.uniform(0.0, bz)),
        )
        ok = all(
            math.dist(cand, q) >= min_separation for q in placed
        )
        if ok:
            placed.append(cand)
        else:
            rejections += 1
            if rejections >= max_rejections:
                raise ValueError(
                    f"failed to place {n} points with separation {min_separation} in box {box} "
                    f"after {max_rejections} rejections"
                )
    return placed


def generate_random(
    n: int,
    box: tuple[float, float, float],
    radius: float,
    seed: int,
    *,
    num_samples: int = DEFAULT_NUM_SAMPLES,
    degree: int = DEFAULT_DEGREE,
    duration: float = DEFAULT_DURATION,
    max_rejections: int = _MAX_REJECTIONS,
) -> ProblemSpec:
    """Random start and goal positions in a box, deterministic given seed.

    Starts and goals are each rejection-sampled to pairwise separations of
    at least twice the required safety distance (2 * l_xy = 4 * radius),
    leaving slack for the endpoint spheroid constraints.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    rng = np.random.default_rng(seed)
    min_sep = 4.0 * radius
    starts = _sample_positions(rng, n, box, min_sep, max_rejections)
    goals = _sample_positions(rng, n, box, min_sep, max_rejections)
    return ProblemSpec(
        start=tuple(BoundaryState.at_rest(p) for p in starts),
        goal=tuple(BoundaryState.at_rest(p) for p in goals),
        geometry=AgentGeometry.sphere_from_radius(radius),
        num_samples=num_samples,
        degree=degree,
        duration=duration,
        seed=seed,
    )


def generate_random_with_obstacles(
    n: int,
    box: tuple[float, float, float],
    radius: float,
    n_obs: int,
    obs_radius: float,
    seed: int,
    *,
    num_samples: int = DEFAULT_NUM_SAMPLES,
    degree: int = DEFAULT_DEGREE,
    duration: float = DEFAULT_DURATION,
    max_rejections: int = _MAX_REJECTIONS,
) -> ProblemSpec:
    """Random scenario plus static spherical obstacles clear of all endpoints.

    Agents are drawn from the same stream as generate_random, so n_obs=0
    reproduces it exactly; obstacles are then placed keeping at least
    obs_radius + 2 * radius from every start and goal position.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if n_obs > 0 and not obs_radius > 0:
        raise ValueError(f"obs_radius must be positive, got {obs_radius}")
    # Agents are drawn first from the seeded stream, exactly as in
    # generate_random; obstacle draws extend the same stream.
    rng = np.random.default_rng(seed)
    min_sep = 4.0 * radius
    starts = _sample_positions(rng, n, box, min_sep, max_rejections)
    goals = _sample_positions(rng, n, box, min_sep, max_rejections)
    spec = ProblemSpec(
        start=tuple(BoundaryState.at_rest(p) for p in starts),
        goal=tuple(BoundaryState.at_rest(p) for p in goals),
        geometry=AgentGeometry.sphere_from_radius(radius),
        num_samples=num_samples,
        degree=degree,
        duration=duration,
        seed=seed,
    )
    if n_obs == 0:
        return spec

    endpoints = starts + goals
    clearance = obs_radius + 2.0 * radius
    bx, by, bz = box
    obstacles: list[Obstacle] = []
    rejections = 0
    while len(obstacles) < n_obs:
        cand = (
            float(rng.uniform(-bx / 2.0, bx / 2.0)),
            float(rng.uniform(-by / 2.0, by / 2.0)),
            float(rng.uniform(0.0, bz)),
        )
        if all(math.dist(cand, p) >= clearance for p in endpoints):
            obstacles.append(Obstacle(center=cand, radius=obs_radius))
        else:
            rejections += 1
            if rejections >= max_rejections:
                raise ValueError(
                    f"failed to place {n_obs} obstacles clear of endpoints after {max_rejections} rejections"
                )
    return replace(spec, obstacles=tuple(obstacles))


def generate_hallway(
    n: int,
    hallway_length: float,
    hallway_width: float,
    radius: float,
    *,
    z_plane: float = DEFAULT_Z_PLANE,
    num_samples: int = DEFAULT_NUM_SAMPLES,
    degree: int = DEFAULT_DEGREE,
    duration: float = DEFAULT_DURATION,
) -> ProblemSpec:
    """Two facing groups exchanging ends of a narrow corridor.

    The hallway runs along x; each agent's goal is its start mirrored
    through the hallway center (x -> -x), producing head-on exchanges.
    Walls are approximated by rows of large spheres lining both sides,
    since the solver has exactly one constraint primitive.
    """
    if n % 2 != 0:
        raise ValueError(f"hallway scenario needs an even n, got {n}")
    if n < 2:
        raise ValueError(f"hallway scenario needs n >= 2, got {n}")
    if hallway_width < 4.0 * radius:
        raise ValueError(
            f"hallway width {hallway_width} cannot admit agent diameter with margin (need >= {4 * radius})"
        )
    if not (hallway_length > 0 and radius > 0):
        raise ValueError("hallway_length and radius must be positive")

    half = n // 2
    pair_sep = 2.0 * radius  # l_xy
    spacing = 2.0 * pair_sep  # same 2x margin as the random generator
    usable_half_width = hallway_width / 2.0 - 2.0 * radius
    cols = max(1, int(usable_half_width * 2.0 // spacing) + 1)
    cols = min(cols, half)
    rows = math.ceil(half / cols)
    depth = (rows - 1) * spacing
    if depth > hallway_length / 2.0 - spacing:
        raise ValueError(
            f"{n} agents do not fit in the hallway ends (need depth {depth:.2f} per side)"
        )

    ys = np.linspace(-usable_half_width, usable_half_width, cols) if cols > 1 else np.array([0.0])
    starts: list[BoundaryState] = []
    goals: list[BoundaryState] = []
    for group_sign in (-1.0, 1.0):
        idx = 0
        for r in range(rows):
            for c in range(cols):
                if idx >= half:
                    break
                x = group_sign * (hallway_length / 2.0 + r * spacing)
                y = float(ys[c])
                starts.append(BoundaryState.at_rest((x, y, z_plane)))
                goals.append(BoundaryState.at_rest((-x, y, z_plane)))
                idx += 1

    wall_radius = 2.0 * hallway_width
    wall_spacing = hallway_width / 2.0
    n_wall = int(hallway_length // wall_spacing) + 1
    xs = np.linspace(-hallway_length / 2.0, hallway_length / 2.0, n_wall)
    obstacles = [
        Obstacle(center=(float(x), side_sign * (hallway_width / 2.0 + wall_radius), z_plane), radius=wall_radius)
        for side_sign in (-1.0, 1.0)
        for x in xs
    ]
    return ProblemSpec(
        start=tuple(starts),
        goal=tuple(goals),
        geometry=AgentGeometry.sphere_from_radius(radius),
        obstacles=tuple(obstacles),
        num_samples=num_samples,
        degree=degree,
        duration=duration,
    )


# --- JSON scenario format -------------------------------------------------
#
# {
#   "n": 8, "duration": 10.0, "m": 100, "degree": 10, "basis": "bernstein",
#   "radius": 0.4,                      # or "l_xy": ..., "l_z": ...
#   "start": [{"position": [x,y,z], "velocity": [...], "acceleration": [...]}, ...],
#   "goal":  [...],                     # plain [x, y, z] entries also accepted
#   "obstacles": [{"center": [x,y,z], "radius": 0.5}, ...],
#   "seed": 7
# }


def _boundary_to_dict(state: BoundaryState) -> dict:
    return {
        "position": list(state.position),
        "velocity": list(state.velocity),
        "acceleration": list(state.acceleration),
    }


def _boundary_from_obj(obj) -> BoundaryState:
    if isinstance(obj, dict):
        return BoundaryState(
            position=tuple(obj["position"]),
            velocity=tuple(obj.get("velocity", (0.0, 0.0, 0.0))),
            acceleration=tuple(obj.get("acceleration", (0.0, 0.0, 0.0))),
        )
    return BoundaryState.at_rest(tuple(obj))


def spec_to_dict(spec: ProblemSpec) -> dict:
    """Serialize to the scenario JSON schema (plain dict)."""
    doc: dict = {
        "n": spec.num_agents,
        "duration": spec.duration,
        "m": spec.num_samples,
        "degree": spec.degree,
        "basis": spec.basis_kind.value,
    }
    if spec.geometry.is_sphere:
        doc["radius"] = spec.geometry.agent_radius
    else:
        doc["l_xy"] = spec.geometry.l_xy
        doc["l_z"] = spec.geometry.l_z
    doc["start"] = [_boundary_to_dict(s) for s in spec.start]
    doc["goal"] = [_boundary_to_dict(g) for g in spec.goal]
    doc["obstacles"] = [{"center": list(o.center), "radius": o.radius} for o in spec.obstacles]
    if spec.seed is not None:
        doc["seed"] = spec.seed
    return doc


def spec_from_dict(doc: dict) -> ProblemSpec:
    """Parse the scenario JSON schema; raises ValueError on malformed input."""
    try:
        start = tuple(_boundary_from_obj(s) for s in doc["start"])
        goal = tuple(_boundary_from_obj(g) for g in doc["goal"])
    except (KeyError, TypeError, IndexError) as exc:
        raise ValueError(f"malformed scenario document: {exc}") from exc
    if "radius" in doc:
        geometry = AgentGeometry.sphere_from_radius(float(doc["radius"]))
    elif "l_xy" in doc and "l_z" in doc:
        geometry = AgentGeometry(l_xy=float(doc["l_xy"]), l_z=float(doc["l_z"]))
    else:
        raise ValueError("scenario must provide either 'radius' or both 'l_xy' and 'l_z'")
    n = int(doc.get("n", len(start)))
    if n != len(start):
        raise ValueError(f"scenario field n={n} disagrees with {len(start)} start states")
    obstacles = tuple(
        Obstacle(center=tuple(o["center"]), radius=float(o["radius"]))
        for o in doc.get("obstacles", [])
    )
    return ProblemSpec(
        start=start,
        goal=goal,
        geometry=geometry,
        obstacles=obstacles,
        num_samples=int(doc.get("m", DEFAULT_NUM_SAMPLES)),
        degree=int(doc.get("degree", DEFAULT_DEGREE)),
        duration=float(doc.get("duration", DEFAULT_DURATION)),
        basis_kind=BasisKind(doc.get("basis", "bernstein")),
        seed=doc.get("seed"),
    )


def save_scenario(spec: ProblemSpec, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(spec_to_dict(spec), fh, indent=2)
        fh.write("\n")


def load_scenario(path: str | os.PathLike) -> ProblemSpec:
    with open(path) as fh:
        return spec_from_dict(json.load(fh))
