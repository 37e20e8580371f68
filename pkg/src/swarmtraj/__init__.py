"""Joint multi-agent trajectory optimization with cached KKT factorizations."""

from .basis import BasisKind, BasisMatrices, TimeGrid, build_basis, build_time_grid
from .kkt_cache import (
    AssembledSystem,
    FactorCache,
    Fingerprint,
    KktFactor,
    RhoSchedule,
    assemble,
    build_rho_schedule,
    factorize,
    solve_axis,
)
from .problem import (
    AgentGeometry,
    BoundaryState,
    Obstacle,
    ProblemSpec,
    Violation,
    generate_hallway,
    generate_random,
    generate_random_with_obstacles,
    generate_square,
    load_scenario,
    save_scenario,
    spec_from_dict,
    spec_to_dict,
    validate,
)
from .solver import (
    InfeasibleProblemError,
    SolveReport,
    SolverConfig,
    SolverState,
    am_solve,
    initialize,
    project_alpha_beta,
    solve_d,
)
from .validation import (
    CollisionReport,
    TrajectoryMetrics,
    arc_length,
    check_collisions,
    smoothness,
    trajectory_metrics,
)

__version__ = "0.1.0"
