"""Alternating-minimization solver for joint multi-agent trajectories.

The collision constraints are rewritten as equalities through a spheroid
parametrization of each pairwise position difference:

    dx = l_xy * d * sin(beta) * cos(alpha)
    dy = l_xy * d * sin(beta) * sin(alpha)
    dz = l_z  * d * cos(beta)

with d >= 1 keeping the pair outside the safety spheroid.  The augmented
cost couples the smoothness quadratic with quadratic penalties on these
equalities plus multiplier terms.  Each iteration minimizes the cost one
block at a time:

  1. per-axis coefficients: three equality-constrained QPs, solved
     against cached KKT factorizations (matrix-vector products only);
  2. (alpha, beta): closed-form projection of the current differences
     onto the spheroid directions;
  3. d: decoupled scalar convex QPs with a closed-form clipped solution;
  4. multipliers: gradient-style update proportional to the residual.

The residual of the parametrization equalities, evaluated without the
multiplier shift, is the convergence measure: near zero it certifies the
trajectories respect the (scaled) safety spheroids.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisMatrices, build_basis, linear_coefficients
from .kkt_cache import (
    AssembledSystem,
    FactorCache,
    RhoSchedule,
    assemble,
    build_rho_schedule,
)
from .problem import ProblemSpec, validate
from . import validation

log = logging.getLogger(__name__)


class InfeasibleProblemError(ValueError):
    """The problem instance violates its own invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        summary = "; ".join(str(v) for v in self.violations[:5])
        if len(self.violations) > 5:
            summary += f"; ... ({len(self.violations)} total)"
        super().__init__(f"invalid problem instance: {summary}")


@dataclass
class SolverConfig:
    """Tunables for one solve."""

    max_iters: int = 150
    tolerance: float = 1e-2  # meters, on max-abs residual
    rho_initial: float = 1.0
    rho_growth: float = 2.0
    rho_stages: int = 10
    initialization: str = "straight_line"
    track_descent: bool = False
    keep_state: bool = False  # expose the final SolverState in diagnostics

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.initialization != "straight_line":
            raise ValueError(f"unknown initialization mode {self.initialization!r}")

    def schedule(self) -> RhoSchedule:
        return build_rho_schedule(self.rho_initial, self.rho_growth, self.rho_stages, self.max_iters)


@dataclass
class PairVariables:
    """Spheroid parametrization variables, one entry per pair per sample."""

    alpha: np.ndarray  # (p, m), radians in [-pi, pi]
    beta: np.ndarray  # (p, m), radians in [0, pi]
    d: np.ndarray  # (p, m), dimensionless >= 1


@dataclass
class Multipliers:
    """Per-pair per-sample Lagrange multipliers, one set per axis."""

    lambda_x: np.ndarray
    lambda_y: np.ndarray
    lambda_z: np.ndarray

    def for_axis(self, axis: int) -> np.ndarray:
        return (self.lambda_x, self.lambda_y, self.lambda_z)[axis]


@dataclass
class SolverState:
    """Complete mutable state of one solve."""

    system: AssembledSystem
    c_x: np.ndarray  # (n, n_coeffs)
    c_y: np.ndarray
    c_z: np.ndarray
    pair_vars: PairVariables
    multipliers: Multipliers
    rho: float
    stage: int = 0
    iteration: int = 0
    residual_norms: list[float] = field(default_factory=list)
    residual_max: list[float] = field(default_factory=list)

    def coeffs(self, axis: int) -> np.ndarray:
        return (self.c_x, self.c_y, self.c_z)[axis]

    def set_coeffs(self, axis: int, value: np.ndarray) -> None:
        if axis == 0:
            self.c_x = value
        elif axis == 1:
            self.c_y = value
        else:
            self.c_z = value

    def sampled_positions(self) -> np.ndarray:
        """Trajectories on the grid, shape (n, m, 3)."""
        P = self.system.pairs.basis.P
        return np.stack([self.coeffs(a) @ P.T for a in range(3)], axis=-1)


@dataclass
class SolveReport:
    """Everything a caller needs to use or audit one solve."""

    trajectories: np.ndarray  # (n, m, 3)
    coefficients: np.ndarray  # (3, n, n_coeffs)
    converged: bool
    iterations: int
    residual_norm: float
    residual_max_abs: float
    residual_norm_history: list[float]
    residual_max_history: list[float]
    boundary_max_history: list[float]
    timings: dict
    metrics: dict
    cache_stats: dict
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self, include_trajectories: bool = True) -> dict:
        doc = {
            "converged": self.converged,
            "iterations": self.iterations,
            "residual_norm": self.residual_norm,
            "residual_max_abs": self.residual_max_abs,
            "residual_norm_history": list(self.residual_norm_history),
            "residual_max_history": list(self.residual_max_history),
            "boundary_max_history": list(self.boundary_max_history),
            "timings": dict(self.timings),
            "metrics": dict(self.metrics),
            "cache_stats": dict(self.cache_stats),
        }
        if include_trajectories:
            doc["trajectories"] = self.trajectories.tolist()
        return doc


# --- element-wise building blocks ------------------------------------------


def project_alpha_beta(dx, dy, dz, l_xy, l_z):
    """Angles pointing a spheroid parametrization at the given difference.

    alpha is the in-plane azimuth; beta the polar angle measured from the
    +z semi-axis after scaling each component by its semi-axis.  beta
    lands in [0, pi] by construction (the first arctan2 argument is
    non-negative).  The all-zero difference maps to (0, pi/2).
    """
    dx = np.asarray(dx, dtype=float)
    dy = np.asarray(dy, dtype=float)
    dz = np.asarray(dz, dtype=float)
    planar = np.hypot(dx, dy)
    alpha = np.arctan2(dy, dx)
    beta = np.arctan2(planar / l_xy, dz / np.asarray(l_z, dtype=float))
    degenerate = (planar == 0.0) & (dz == 0.0)
    if np.any(degenerate):
        beta = np.where(degenerate, np.pi / 2.0, beta)
    return alpha, beta


def projection_scale(dx, dy, dz, l_xy, l_z):
    """Radial factor k with (l_xy k sin(b) cos(a), l_xy k sin(b) sin(a), l_z k cos(b)) = (dx, dy, dz)."""
    return np.hypot(np.hypot(np.asarray(dx, float), np.asarray(dy, float)) / l_xy,
                    np.asarray(dz, float) / np.asarray(l_z, float))


def solve_d(gx, gy, gz, alpha, beta, l_xy, l_z):
    """Clipped minimizer of the scalar quadratic in the radial factor d.

    Each pair/sample decouples into a single-variable convex quadratic;
    its unconstrained minimizer is projected onto d >= 1 (d below 1 would
    place the pair inside the safety spheroid).
    """
    sb, cb = np.sin(beta), np.cos(beta)
    numer = l_xy * sb * (np.asarray(gx, float) * np.cos(alpha) + np.asarray(gy, float) * np.sin(alpha))
    numer = numer + l_z * cb * np.asarray(gz, float)
    denom = np.asarray(l_xy, float) ** 2 * sb**2 + np.asarray(l_z, float) ** 2 * cb**2
    return np.maximum(1.0, numer / denom)


def residual_components(diffs: np.ndarray, pair_vars: PairVariables, l_xy, l_z) -> np.ndarray:
    """f_c components (3, p, m): differences minus their parametrization."""
    sb = np.sin(pair_vars.beta)
    r = np.empty_like(diffs)
    r[0] = diffs[0] - l_xy * pair_vars.d * sb * np.cos(pair_vars.alpha)
    r[1] = diffs[1] - l_xy * pair_vars.d * sb * np.sin(pair_vars.alpha)
    r[2] = diffs[2] - l_z * pair_vars.d * np.cos(pair_vars.beta)
    return r


def pairwise_differences(state: SolverState) -> np.ndarray:
    """Sampled pairwise differences (3, p, m), obstacle offsets removed."""
    pairs = state.system.pairs
    p, m = pairs.num_pairs, pairs.basis.num_samples
    diffs = np.empty((3, p, m))
    for axis in range(3):
        raw = pairs.apply(state.coeffs(axis).ravel())
        diffs[axis] = raw.reshape(p, m) - pairs.offsets[:, axis][:, None]
    return diffs


def build_b_fc(state: SolverState, axis: int) -> np.ndarray:
    """Right-hand side of one axis subproblem, stacked pair-major (m*p,).

    Element-wise: the parametrized target for this axis, minus the
    multiplier shift lambda/rho, plus the obstacle's constant coordinate
    for agent-obstacle pairs.
    """
    pairs = state.system.pairs
    pv = state.pair_vars
    l_xy = pairs.l_xy[:, None]
    l_z = pairs.l_z[:, None]
    if axis == 0:
        target = l_xy * pv.d * np.sin(pv.beta) * np.cos(pv.alpha)
    elif axis == 1:
        target = l_xy * pv.d * np.sin(pv.beta) * np.sin(pv.alpha)
    else:
        target = l_z * pv.d * np.cos(pv.beta)
    b = target - state.multipliers.for_axis(axis) / state.rho + pairs.offsets[:, axis][:, None]
    return b.ravel()


def _residual_norms(res: np.ndarray) -> tuple[float, float]:
    if res.size == 0:
        return 0.0, 0.0
    return float(np.linalg.norm(res)), float(np.max(np.abs(res)))


def compute_residual(state: SolverState) -> tuple[float, float]:
    """(Euclidean norm, max-abs) of the stacked equality residuals, in meters."""
    pairs = state.system.pairs
    diffs = pairwise_differences(state)
    res = residual_components(diffs, state.pair_vars, pairs.l_xy[:, None], pairs.l_z[:, None])
    return _residual_norms(res)


def update_multipliers(state: SolverState) -> SolverState:
    """Shift multipliers by rho times the current residual components."""
    pairs = state.system.pairs
    diffs = pairwise_differences(state)
    res = residual_components(diffs, state.pair_vars, pairs.l_xy[:, None], pairs.l_z[:, None])
    state.multipliers.lambda_x += state.rho * res[0]
    state.multipliers.lambda_y += state.rho * res[1]
    state.multipliers.lambda_z += state.rho * res[2]
    return state


def augmented_cost(state: SolverState) -> float:
    """Value of the penalized objective at the current state.

    Matches the per-axis QP objective: half the smoothness quadratic plus
    rho/2 times the squared multiplier-shifted residuals, summed over
    axes.
    """
    pairs = state.system.pairs
    diffs = pairwise_differences(state)
    res = residual_components(diffs, state.pair_vars, pairs.l_xy[:, None], pairs.l_z[:, None])
    total = 0.0
    Q = state.system.Q
    lam = (state.multipliers.lambda_x, state.multipliers.lambda_y, state.multipliers.lambda_z)
    for axis in range(3):
        c = state.coeffs(axis).ravel()
        total += 0.5 * float(c @ Q @ c)
        shifted = res[axis] + lam[axis] / state.rho
        total += 0.5 * state.rho * float(np.sum(shifted * shifted))
    return total


# --- initialization and the main loop ---------------------------------------


def initialize(
    spec: ProblemSpec,
    basis: BasisMatrices,
    system: AssembledSystem | None = None,
    rho: float = 1.0,
) -> SolverState:
    """Starting state: straight-line trajectories, projected pair variables.

    Coefficients trace each agent's straight line from start to goal
    position.  Pair angles come from projecting the resulting differences;
    the radial factor is the projection scale clipped up to 1 so the
    parametrization starts on or outside the safety spheroid.  Multipliers
    start at zero.
    """
    if system is None:
        system = assemble(spec, basis)
    n = spec.num_agents
    coeffs = np.empty((3, n, basis.num_coeffs))
    for i, (s, g) in enumerate(zip(spec.start, spec.goal)):
        for axis in range(3):
            coeffs[axis, i] = linear_coefficients(basis, s.position[axis], g.position[axis])
    pairs = system.pairs
    p, m = pairs.num_pairs, basis.num_samples
    state = SolverState(
        system=system,
        c_x=coeffs[0],
        c_y=coeffs[1],
        c_z=coeffs[2],
        pair_vars=PairVariables(
            alpha=np.zeros((p, m)), beta=np.full((p, m), np.pi / 2.0), d=np.ones((p, m))
        ),
        multipliers=Multipliers(
            lambda_x=np.zeros((p, m)), lambda_y=np.zeros((p, m)), lambda_z=np.zeros((p, m))
        ),
        rho=rho,
    )
    if p > 0:
        diffs = pairwise_differences(state)
        l_xy = pairs.l_xy[:, None]
        l_z = pairs.l_z[:, None]
        alpha, beta = project_alpha_beta(diffs[0], diffs[1], diffs[2], l_xy, l_z)
        scale = projection_scale(diffs[0], diffs[1], diffs[2], l_xy, l_z)
        state.pair_vars = PairVariables(alpha=alpha, beta=beta, d=np.maximum(1.0, scale))
    return state


def _check_ranges(pair_vars: PairVariables) -> None:
    if pair_vars.beta.size == 0:
        return
    assert np.all(pair_vars.beta >= 0.0) and np.all(pair_vars.beta <= np.pi)
    assert np.all(pair_vars.d >= 1.0)
    assert np.all(np.abs(pair_vars.alpha) <= np.pi)


def am_solve(
    spec: ProblemSpec,
    config: SolverConfig | None = None,
    cache: FactorCache | None = None,
) -> SolveReport:
    """Run the alternating-minimization loop end to end.

    Setup assembles the blocks and factorizes the KKT matrix for every
    penalty stage; the loop then only performs cached solves and
    element-wise updates.  Non-convergence within max_iters is reported,
    not raised.

    Raises:
        InfeasibleProblemError: if the instance fails validation.
    """
    config = config or SolverConfig()
    violations = validate(spec)
    if violations:
        raise InfeasibleProblemError(violations)

    t_start = time.perf_counter()
    basis = build_basis(spec.time_grid(), spec.degree, spec.basis_kind)
    system = assemble(spec, basis)
    t_assembled = time.perf_counter()

    schedule = config.schedule()
    cache = cache if cache is not None else FactorCache()
    factors = cache.prefactorize(system, schedule)
    t_factorized = time.perf_counter()

    state = initialize(spec, basis, system=system, rho=schedule.values[0])
    pairs = system.pairs
    l_xy = pairs.l_xy[:, None]
    l_z = pairs.l_z[:, None]
    eq = system.eq
    n, n_v = spec.num_agents, basis.num_coeffs

    boundary_history: list[float] = []
    descent_slack: list[float] = []
    converged = False

    t_loop0 = time.perf_counter()
    for k in range(config.max_iters):
        state.stage = schedule.stage_for(k)
        state.rho = schedule.values[state.stage]
        factor = factors[state.stage]

        # Descent of the axis steps is only meaningful once the incoming
        # block satisfies its own equality constraints; the straight-line
        # initialization does not, so iteration 1 is warm-up.
        measure_descent = config.track_descent and k >= 1
        for axis in range(3):
            if measure_descent:
                before = augmented_cost(state)
            b_fc = build_b_fc(state, axis)
            coeffs = factor.solve(b_fc, eq.b_eq(axis))
            state.set_coeffs(axis, coeffs.reshape(n, n_v))
            if measure_descent:
                descent_slack.append(augmented_cost(state) - before)

        diffs = pairwise_differences(state)
        alpha, beta = project_alpha_beta(diffs[0], diffs[1], diffs[2], l_xy, l_z)
        state.pair_vars.alpha = alpha
        state.pair_vars.beta = beta
        inv_rho = 1.0 / state.rho
        state.pair_vars.d = solve_d(
            diffs[0] + state.multipliers.lambda_x * inv_rho,
            diffs[1] + state.multipliers.lambda_y * inv_rho,
            diffs[2] + state.multipliers.lambda_z * inv_rho,
            alpha,
            beta,
            l_xy,
            l_z,
        )
        _check_ranges(state.pair_vars)

        res = residual_components(diffs, state.pair_vars, l_xy, l_z)
        state.multipliers.lambda_x += state.rho * res[0]
        state.multipliers.lambda_y += state.rho * res[1]
        state.multipliers.lambda_z += state.rho * res[2]

        norm, max_abs = _residual_norms(res)
        state.residual_norms.append(norm)
        state.residual_max.append(max_abs)

        bmax = 0.0
        for axis in range(3):
            gap = eq.A_eq @ state.coeffs(axis).ravel() - eq.b_eq(axis)
            bmax = max(bmax, float(np.max(np.abs(gap))))
        boundary_history.append(bmax)

        state.iteration = k + 1
        if max_abs <= config.tolerance:
            converged = True
            break
    t_loop1 = time.perf_counter()

    trajectories = state.sampled_positions()
    report_metrics = _final_metrics(spec, trajectories)
    timings = {
        "assembly_s": t_assembled - t_start,
        "factorization_s": t_factorized - t_assembled,
        "loop_s": t_loop1 - t_loop0,
        "per_iteration_s": (t_loop1 - t_loop0) / max(1, state.iteration),
        "total_s": time.perf_counter() - t_start,
    }
    diagnostics = {}
    if config.track_descent:
        diagnostics["descent_slack"] = descent_slack
    if config.keep_state:
        diagnostics["final_state"] = state
    log.info(
        "solve finished: converged=%s iterations=%d residual_max=%.3e",
        converged,
        state.iteration,
        state.residual_max[-1] if state.residual_max else 0.0,
    )
    return SolveReport(
        trajectories=trajectories,
        coefficients=np.stack([state.c_x, state.c_y, state.c_z]),
        converged=converged,
        iterations=state.iteration,
        residual_norm=state.residual_norms[-1] if state.residual_norms else 0.0,
        residual_max_abs=state.residual_max[-1] if state.residual_max else 0.0,
        residual_norm_history=state.residual_norms,
        residual_max_history=state.residual_max,
        boundary_max_history=boundary_history,
        timings=timings,
        metrics=report_metrics,
        cache_stats=cache.stats(),
        diagnostics=diagnostics,
    )


def _final_metrics(spec: ProblemSpec, trajectories: np.ndarray) -> dict:
    collision = validation.check_collisions(trajectories, spec.geometry, spec.obstacles)
    quality = validation.trajectory_metrics(trajectories)
    min_dist = collision.min_normalized_distance
    return {
        # None when there is nothing that could collide (single agent, no obstacles)
        "min_normalized_distance": None if np.isinf(min_dist) else min_dist,
        "num_collision_violations": len(collision.violations),
        "arc_length": list(quality.arc_length),
        "smoothness": list(quality.smoothness),
        "mean_arc_length": float(np.mean(quality.arc_length)),
        "mean_smoothness": float(np.mean(quality.smoothness)),
    }
