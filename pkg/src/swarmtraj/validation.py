"""Independent safety checks and trajectory quality metrics.

check_collisions re-evaluates the spheroid separation for every pair at
every sample with plain scalar arithmetic.  It deliberately shares no
code with the solver's residual path, so agreement between the two is
evidence, not tautology.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .problem import AgentGeometry, Obstacle


@dataclass(frozen=True)
class CollisionReport:
    """Worst-case normalized separation and every sub-unit sample.

    A normalized distance of 1 means the pair sits exactly on the safety
    spheroid; below 1 is a violation.
    """

    min_normalized_distance: float
    violations: list[tuple[tuple[str, int, int], int, float]]


@dataclass(frozen=True)
class TrajectoryMetrics:
    """Per-agent path quality: polyline length and curvature proxy."""

    arc_length: tuple[float, ...]
    smoothness: tuple[float, ...]


def check_collisions(
    trajectories: np.ndarray,
    geometry: AgentGeometry,
    obstacles: tuple[Obstacle, ...] | list[Obstacle] = (),
) -> CollisionReport:
    """Evaluate every agent pair and agent-obstacle pair at every sample.

    Args:
        trajectories: (n, m, 3) sampled positions on a common grid.
        geometry: pairwise agent spheroid semi-axes.
        obstacles: static spheres; each is checked against every agent with
            semi-axes l/2 + obstacle radius.

    Returns:
        CollisionReport with the global minimum and a list of
        (pair, sample index, value) entries strictly below 1.

    Raises:
        ValueError: if trajectories is not (n, m, 3) or agents disagree on
            the number of samples.
    """
    traj = np.asarray(trajectories, dtype=float)
    if traj.ndim != 3 or traj.shape[2] != 3:
        raise ValueError(f"trajectories must have shape (n, m, 3), got {traj.shape}")
    n, m, _ = traj.shape

    minimum = math.inf
    violations: list[tuple[tuple[str, int, int], int, float]] = []

    for i in range(n):
        for j in range(i + 1, n):
            for r in range(m):
                dx = (traj[i, r, 0] - traj[j, r, 0]) / geometry.l_xy
                dy = (traj[i, r, 1] - traj[j, r, 1]) / geometry.l_xy
                dz = (traj[i, r, 2] - traj[j, r, 2]) / geometry.l_z
                value = math.sqrt(dx * dx + dy * dy + dz * dz)
                minimum = min(minimum, value)
                if value < 1.0:
                    violations.append((("agent", i, j), r, value))

    for i in range(n):
        for k, obs in enumerate(obstacles):
            sep_xy = geometry.l_xy / 2.0 + obs.radius
            sep_z = geometry.l_z / 2.0 + obs.radius
            for r in range(m):
                dx = (traj[i, r, 0] - obs.center[0]) / sep_xy
                dy = (traj[i, r, 1] - obs.center[1]) / sep_xy
                dz = (traj[i, r, 2] - obs.center[2]) / sep_z
                value = math.sqrt(dx * dx + dy * dy + dz * dz)
                minimum = min(minimum, value)
                if value < 1.0:
                    violations.append((("obstacle", i, k), r, value))

    # No pairs at all (single agent, no obstacles): nothing can collide.
    return CollisionReport(min_normalized_distance=float(minimum), violations=violations)


def arc_length(trajectory: np.ndarray) -> float:
    """Total length of the sampled polyline, meters.

    Args:
        trajectory: (m, 3) positions, m >= 2.
    """
    traj = np.asarray(trajectory, dtype=float)
    if traj.ndim != 2 or traj.shape[0] < 2:
        raise ValueError(f"trajectory must be (m >= 2, 3), got {traj.shape}")
    return float(np.sum(np.linalg.norm(np.diff(traj, axis=0), axis=1)))


def smoothness(trajectory: np.ndarray) -> float:
    """Norm of the stacked second-order finite differences of the positions.

    A discretization-robust acceleration proxy: zero for straight lines at
    uniform sampling, growing with curvature and jitter.

    Args:
        trajectory: (m, 3) positions, m >= 3.
    """
    traj = np.asarray(trajectory, dtype=float)
    if traj.ndim != 2 or traj.shape[0] < 3:
        raise ValueError(f"trajectory must be (m >= 3, 3), got {traj.shape}")
    second = traj[2:] - 2.0 * traj[1:-1] + traj[:-2]
    return float(np.linalg.norm(second))


def trajectory_metrics(trajectories: np.ndarray) -> TrajectoryMetrics:
    """Arc length and smoothness for every agent of an (n, m, 3) batch."""
    traj = np.asarray(trajectories, dtype=float)
    if traj.ndim != 3 or traj.shape[2] != 3:
        raise ValueError(f"trajectories must have shape (n, m, 3), got {traj.shape}")
    return TrajectoryMetrics(
        arc_length=tuple(arc_length(traj[i]) for i in range(traj.shape[0])),
        smoothness=tuple(smoothness(traj[i]) for i in range(traj.shape[0])),
    )
