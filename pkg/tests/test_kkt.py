"""Assembly, factorization, cached solves, and the penalty schedule.

The independent oracle throughout is a dense KKT system built from
scratch with plain numpy (vstack/solve), never through the package's
assembly helpers.
"""

import dataclasses

import numpy as np
import pytest

from swarmtraj.basis import build_basis, build_time_grid
from swarmtraj.kkt_cache import (
    FactorCache,
    assemble,
    assemble_for_dimensions,
    build_rho_schedule,
    factorize,
    solve_axis,
)
from swarmtraj.problem import AgentGeometry, BoundaryState, Obstacle, ProblemSpec


def make_spec(n=2, n_obs=0, num_samples=20, degree=6, duration=2.0, spacing=4.0):
    starts = tuple(BoundaryState.at_rest((spacing * i, 0.0, 0.0)) for i in range(n))
    goals = tuple(BoundaryState.at_rest((spacing * i, spacing, 0.0)) for i in range(n))
    obstacles = tuple(Obstacle(center=(spacing * k, -10.0, 0.0), radius=0.5) for k in range(n_obs))
    return ProblemSpec(
        start=starts,
        goal=goals,
        geometry=AgentGeometry.sphere_from_radius(0.4),
        obstacles=obstacles,
        num_samples=num_samples,
        degree=degree,
        duration=duration,
    )


def basis_for(spec):
    return build_basis(build_time_grid(spec.num_samples, spec.duration), spec.degree, spec.basis_kind)


def dense_kkt_solve_oracle(H, A, g, b):
    """Independent equality-constrained QP solve: stack and invert densely."""
    n, k = H.shape[0], A.shape[0]
    kkt = np.vstack([np.hstack([H, A.T]), np.hstack([A, np.zeros((k, k))])])
    sol = np.linalg.solve(kkt, np.concatenate([g, b]))
    return sol[:n], sol[n:]


# --- assembly ----------------------------------------------------------------


def test_single_agent_has_no_pairs():
    spec = make_spec(n=1)
    basis = basis_for(spec)
    system = assemble(spec, basis)
    assert system.pairs.num_pairs == 0
    assert system.pairs.num_rows == 0
    np.testing.assert_allclose(system.Q, basis.Pddot.T @ basis.Pddot)


def test_three_agents_lexicographic_pairs():
    spec = make_spec(n=3)
    system = assemble(spec, basis_for(spec))
    agent_pairs = [(i, j) for kind, i, j in system.pairs.pair_index if kind == "agent"]
    assert agent_pairs == [(0, 1), (0, 2), (1, 2)]
    assert system.pairs.num_rows == 3 * spec.num_samples


def test_obstacle_pairs_follow_agent_pairs():
    spec = make_spec(n=2, n_obs=2)
    system = assemble(spec, basis_for(spec))
    kinds = [kind for kind, _, _ in system.pairs.pair_index]
    assert kinds == ["agent", "obstacle", "obstacle", "obstacle", "obstacle"]
    obstacle_pairs = [(i, k) for kind, i, k in system.pairs.pair_index if kind == "obstacle"]
    assert obstacle_pairs == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_pairwise_apply_matches_direct_position_differences():
    # n=2, n_v=6, m=5: A_fc c must equal the sampled difference x_0(t) - x_1(t).
    spec = make_spec(n=2, num_samples=5, degree=5)
    basis = basis_for(spec)
    system = assemble(spec, basis)
    rng = np.random.default_rng(0)
    coeffs = rng.normal(size=2 * basis.num_coeffs)
    stacked = system.pairs.apply(coeffs)
    c0, c1 = coeffs[:6], coeffs[6:]
    direct = basis.P @ c0 - basis.P @ c1
    np.testing.assert_allclose(stacked, direct, atol=1e-12)


def test_pairwise_dense_matches_structured_ops():
    spec = make_spec(n=3, n_obs=1, num_samples=7, degree=5)
    system = assemble(spec, basis_for(spec))
    dense = system.pairs.dense()
    assert dense.shape == (system.pairs.num_rows, 3 * 6)
    rng = np.random.default_rng(1)
    c = rng.normal(size=dense.shape[1])
    v = rng.normal(size=dense.shape[0])
    np.testing.assert_allclose(system.pairs.apply(c), dense @ c, atol=1e-12)
    np.testing.assert_allclose(system.pairs.apply_transpose(v), dense.T @ v, atol=1e-12)
    np.testing.assert_allclose(system.pairs.normal_matrix(), dense.T @ dense, atol=1e-12)


def test_equality_block_layout_and_rank():
    spec = make_spec(n=2)
    basis = basis_for(spec)
    system = assemble(spec, basis)
    assert system.eq.A_eq.shape == (12, 2 * basis.num_coeffs)
    assert np.linalg.matrix_rank(system.eq.A_eq) == 12
    # per-agent ordering [pos0, vel0, acc0, posT, velT, accT]
    np.testing.assert_allclose(
        system.eq.b_eq_x[:6],
        [spec.start[0].position[0], 0.0, 0.0, spec.goal[0].position[0], 0.0, 0.0],
    )
    np.testing.assert_allclose(system.eq.b_eq_y[6:12][0], spec.start[1].position[1])


def test_obstacle_offsets_recorded():
    spec = make_spec(n=1, n_obs=2)
    system = assemble(spec, basis_for(spec))
    np.testing.assert_allclose(system.pairs.offsets[0], spec.obstacles[0].center)
    np.testing.assert_allclose(system.pairs.offsets[1], spec.obstacles[1].center)
    # agent-obstacle semi-axes are agent radius + obstacle radius
    assert system.pairs.l_xy[0] == pytest.approx(0.4 + 0.5)


# --- factorization and solves ---------------------------------------------------


def test_boundary_value_solve_matches_dense_oracle():
    # n=1: the KKT solution is the minimum-acceleration polynomial through
    # the six boundary rows; compare against an independent dense solve.
    spec = make_spec(n=1)
    basis = basis_for(spec)
    system = assemble(spec, basis)
    factor = factorize(system, rho=1.0)
    got = factor.solve(np.zeros(0), system.eq.b_eq_x)

    H = basis.Pddot.T @ basis.Pddot
    A = np.vstack([basis.P[0], basis.Pdot[0], basis.Pddot[0], basis.P[-1], basis.Pdot[-1], basis.Pddot[-1]])
    expected, _ = dense_kkt_solve_oracle(H, A, np.zeros(H.shape[0]), system.eq.b_eq_x)
    np.testing.assert_allclose(got, expected, atol=1e-8)


def test_zero_problem_returns_zero_coefficients():
    spec = ProblemSpec(
        start=(BoundaryState.at_rest((0, 0, 0)),),
        goal=(BoundaryState.at_rest((0, 0, 0)),),
        geometry=AgentGeometry.sphere_from_radius(0.4),
        num_samples=10,
        degree=6,
        duration=1.0,
    )
    system = assemble(spec, basis_for(spec))
    factor = factorize(system, rho=2.0)
    np.testing.assert_allclose(factor.solve(np.zeros(0), system.eq.b_eq_x), 0.0, atol=1e-12)


def test_min_acceleration_profile_matches_constrained_lstsq():
    # start 0, goal 1, zero end velocities/accelerations: compare sampled
    # trajectory against the dense-oracle solution of the same QP.
    spec = ProblemSpec(
        start=(BoundaryState.at_rest((0, 0, 0)),),
        goal=(BoundaryState.at_rest((1, 0, 0)),),
        geometry=AgentGeometry.sphere_from_radius(0.4),
        num_samples=50,
        degree=10,
        duration=2.0,
    )
    basis = basis_for(spec)
    system = assemble(spec, basis)
    factor = factorize(system, rho=1.0)
    got = basis.P @ factor.solve(np.zeros(0), system.eq.b_eq_x)

    H = basis.Pddot.T @ basis.Pddot
    A = np.vstack([basis.P[0], basis.Pdot[0], basis.Pddot[0], basis.P[-1], basis.Pdot[-1], basis.Pddot[-1]])
    c_star, _ = dense_kkt_solve_oracle(H, A, np.zeros(11), system.eq.b_eq_x)
    np.testing.assert_allclose(got, basis.P @ c_star, atol=1e-8)


@pytest.mark.parametrize("rho", [0.0, 1.0, 37.5, 512.0])
def test_solve_matches_fresh_dense_solve(rho):
    spec = make_spec(n=2, num_samples=15, degree=6)
    system = assemble(spec, basis_for(spec))
    factor = factorize(system, rho=rho)
    rng = np.random.default_rng(3)
    b_fc = rng.normal(size=system.pairs.num_rows)
    got, nu = factor.solve_with_multipliers(b_fc, system.eq.b_eq_y)

    H = system.Q + rho * system.pairs.dense().T @ system.pairs.dense()
    g = rho * system.pairs.dense().T @ b_fc
    expected, _ = dense_kkt_solve_oracle(H, system.eq.A_eq, g, system.eq.b_eq_y)
    np.testing.assert_allclose(got, expected, rtol=1e-8, atol=1e-10)

    # stationarity with the returned multipliers
    residual = H @ got + system.eq.A_eq.T @ nu - g
    scale = max(1.0, np.linalg.norm(g))
    assert np.linalg.norm(residual) <= 1e-6 * scale


def test_solve_axis_rejects_size_mismatch():
    spec = make_spec(n=2)
    system = assemble(spec, basis_for(spec))
    factor = factorize(system, rho=1.0)
    with pytest.raises(ValueError, match="b_fc"):
        solve_axis(factor, np.zeros(3), system.eq.b_eq_x)
    with pytest.raises(ValueError, match="b_eq"):
        solve_axis(factor, np.zeros(system.pairs.num_rows), np.zeros(5))


@pytest.mark.filterwarnings("ignore::scipy.linalg.LinAlgWarning")
def test_factorize_reports_singular_system():
    spec = make_spec(n=1)
    system = assemble(spec, basis_for(spec))
    broken = dataclasses.replace(
        system, eq=dataclasses.replace(system.eq, A_eq=np.zeros_like(system.eq.A_eq))
    )
    with pytest.raises(ValueError, match="singular"):
        factorize(broken, rho=1.0)


# --- cache ---------------------------------------------------------------------


def test_cache_hit_skips_refactorization():
    spec = make_spec(n=2)
    system = assemble(spec, basis_for(spec))
    cache = FactorCache()
    cache.get(system, 4.0)
    assert cache.stats()["factorizations"] == 1
    cache.get(system, 4.0)
    stats = cache.stats()
    assert stats["factorizations"] == 1
    assert stats["hits"] == 1


def test_reuse_across_instances_with_same_shape():
    # Remark-2 style reuse: same counts and basis, different boundary values.
    spec_a = make_spec(n=2, spacing=4.0)
    spec_b = make_spec(n=2, spacing=6.0)
    basis = basis_for(spec_a)
    sys_a = assemble(spec_a, basis)
    sys_b = assemble(spec_b, basis)
    assert sys_a.fingerprint == sys_b.fingerprint

    cache = FactorCache()
    fa = cache.get(sys_a, 2.0)
    fb = cache.get(sys_b, 2.0)
    assert cache.stats()["factorizations"] == 1
    assert fa._lu is fb._lu  # byte-for-byte shared factors

    for system, factor in ((sys_a, fa), (sys_b, fb)):
        c = factor.solve(np.zeros(system.pairs.num_rows), system.eq.b_eq_x)
        np.testing.assert_allclose(system.eq.A_eq @ c, system.eq.b_eq_x, atol=1e-8)


def test_concurrent_gets_factorize_once():
    from concurrent.futures import ThreadPoolExecutor

    spec = make_spec(n=4, num_samples=40, degree=10)
    system = assemble(spec, basis_for(spec))
    cache = FactorCache()
    with ThreadPoolExecutor(max_workers=8) as pool:
        factors = list(pool.map(lambda _: cache.get(system, 3.0), range(16)))
    assert cache.stats()["factorizations"] == 1  # single-flight per key
    assert all(f._lu is factors[0]._lu for f in factors)


def test_fingerprint_distinguishes_shapes():
    base = make_spec(n=2)
    others = [
        make_spec(n=3),
        make_spec(n=2, n_obs=1),
        make_spec(n=2, num_samples=21),
        make_spec(n=2, degree=7),
        make_spec(n=2, duration=3.0),
    ]
    keys = {assemble(s, basis_for(s)).fingerprint.key() for s in [base] + others}
    assert len(keys) == len(others) + 1


def test_assemble_for_dimensions_matches_real_scenario_fingerprint():
    spec = make_spec(n=3, n_obs=2, num_samples=12, degree=6, duration=2.0)
    real = assemble(spec, basis_for(spec))
    warm = assemble_for_dimensions(3, 12, 6, 2, 2.0, "bernstein")
    assert warm.fingerprint == real.fingerprint


def test_disk_cache_roundtrip(tmp_path):
    spec = make_spec(n=2)
    system = assemble(spec, basis_for(spec))
    schedule = build_rho_schedule(1.0, 2.0, 3, 30)

    writer = FactorCache(disk_dir=tmp_path)
    manifest = writer.persist(system, schedule)
    assert manifest["rho_values"] == [1.0, 2.0, 4.0]
    assert (tmp_path / manifest["fingerprint"] / "factors.npz").exists()

    manifest_path = tmp_path / manifest["fingerprint"] / "manifest.json"
    before = manifest_path.read_bytes()
    writer2 = FactorCache(disk_dir=tmp_path)
    writer2.persist(system, schedule)
    assert manifest_path.read_bytes() == before  # idempotent rebuild

    reader = FactorCache(disk_dir=tmp_path)
    factor = reader.get(system, 2.0)
    assert reader.stats()["factorizations"] == 0  # loaded, not rebuilt
    rng = np.random.default_rng(9)
    b_fc = rng.normal(size=system.pairs.num_rows)
    fresh = factorize(system, rho=2.0)
    np.testing.assert_allclose(
        factor.solve(b_fc, system.eq.b_eq_z), fresh.solve(b_fc, system.eq.b_eq_z), atol=1e-12
    )


# --- rho schedule -----------------------------------------------------------


def test_schedule_geometric_values():
    schedule = build_rho_schedule(1.0, 2.0, 10, 150)
    assert list(schedule.values) == [1, 2, 4, 8, 16, 32, 64, 128, 256, 512]
    assert schedule.switch_every == 15
    assert schedule.stage_for(0) == 0
    assert schedule.stage_for(14) == 0
    assert schedule.stage_for(15) == 1
    assert schedule.stage_for(149) == 9
    assert schedule.stage_for(1000) == 9  # clamped at the last stage


def test_schedule_single_stage_constant():
    schedule = build_rho_schedule(1.0, 2.0, 1, 150)
    assert list(schedule.values) == [1.0]
    assert all(schedule.value_for(k) == 1.0 for k in range(150))


@pytest.mark.parametrize(
    "args", [(0.0, 2.0, 10, 150), (-1.0, 2.0, 10, 150), (1.0, 1.0, 10, 150), (1.0, 2.0, 0, 150), (1.0, 2.0, 10, 0)]
)
def test_schedule_rejects_bad_parameters(args):
    with pytest.raises(ValueError):
        build_rho_schedule(*args)
