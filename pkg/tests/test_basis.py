"""Basis construction: grids, Bernstein/monomial matrices, derivatives.

Derivative matrices are checked against central finite differences of the
sampled basis values; polynomial evaluation is cross-checked against an
independent de Casteljau / Horner evaluation.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swarmtraj.basis import (
    BasisKind,
    bernstein_rows,
    build_basis,
    build_time_grid,
    degree_one_basis_rows,
    linear_coefficients,
)


# --- independent oracles -----------------------------------------------------


def decasteljau(coeffs, tau):
    """Bernstein-form polynomial value by repeated interpolation."""
    pts = list(coeffs)
    while len(pts) > 1:
        pts = [(1.0 - tau) * a + tau * b for a, b in zip(pts, pts[1:])]
    return pts[0]


def horner(coeffs, tau):
    value = 0.0
    for c in reversed(coeffs):
        value = value * tau + c
    return value


# --- time grid ---------------------------------------------------------------


def test_grid_two_samples_is_endpoints():
    grid = build_time_grid(2, 1.0)
    np.testing.assert_array_equal(grid.samples, [0.0, 1.0])


def test_grid_uniform_spacing():
    grid = build_time_grid(5, 2.0)
    np.testing.assert_allclose(grid.samples, [0.0, 0.5, 1.0, 1.5, 2.0])


@pytest.mark.parametrize("m,duration", [(1, 1.0), (0, 1.0), (5, 0.0), (5, -2.0)])
def test_grid_rejects_bad_parameters(m, duration):
    with pytest.raises(ValueError):
        build_time_grid(m, duration)


def test_grid_error_names_the_field():
    with pytest.raises(ValueError, match="num_samples"):
        build_time_grid(1, 1.0)
    with pytest.raises(ValueError, match="duration"):
        build_time_grid(5, -1.0)


# --- Bernstein row values (degree-1 endpoint/midpoint identities) ------------


def test_bernstein_degree1_endpoints():
    rows = bernstein_rows(np.array([0.0, 1.0]), 1)
    np.testing.assert_allclose(rows[0], [1.0, 0.0])
    np.testing.assert_allclose(rows[1], [0.0, 1.0])


def test_bernstein_degree1_midpoint():
    rows = bernstein_rows(np.array([0.5]), 1)
    np.testing.assert_allclose(rows[0], [0.5, 0.5])


# --- sampled matrices --------------------------------------------------------


def test_build_basis_rejects_low_degree():
    grid = build_time_grid(10, 1.0)
    with pytest.raises(ValueError, match="degree"):
        build_basis(grid, 4)


def test_bernstein_partition_of_unity():
    grid = build_time_grid(73, 2.5)
    basis = build_basis(grid, 10)
    np.testing.assert_allclose(basis.P.sum(axis=1), 1.0, atol=1e-12)


def test_bernstein_endpoint_interpolation_rows():
    basis = build_basis(build_time_grid(20, 4.0), 10)
    expected_first = np.zeros(11)
    expected_first[0] = 1.0
    expected_last = np.zeros(11)
    expected_last[-1] = 1.0
    np.testing.assert_allclose(basis.P[0], expected_first, atol=1e-14)
    np.testing.assert_allclose(basis.P[-1], expected_last, atol=1e-14)


def test_derivatives_match_finite_differences():
    # Dense grid so the O(h^2) central-difference error sits well under tol.
    grid = build_time_grid(2001, 3.0)
    basis = build_basis(grid, 10)
    h = grid.step
    fd1 = (basis.P[2:] - basis.P[:-2]) / (2.0 * h)
    fd2 = (basis.P[2:] - 2.0 * basis.P[1:-1] + basis.P[:-2]) / h**2
    scale1 = np.abs(basis.Pdot).max(axis=0)
    scale2 = np.abs(basis.Pddot).max(axis=0)
    assert (np.abs(fd1 - basis.Pdot[1:-1]).max(axis=0) / scale1).max() < 1e-4
    assert (np.abs(fd2 - basis.Pddot[1:-1]).max(axis=0) / scale2).max() < 1e-4


def test_monomial_derivatives_match_finite_differences():
    grid = build_time_grid(2001, 2.0)
    basis = build_basis(grid, 6, BasisKind.MONOMIAL)
    h = grid.step
    fd1 = (basis.P[2:] - basis.P[:-2]) / (2.0 * h)
    scale1 = np.abs(basis.Pdot).max(axis=0)
    scale1[scale1 == 0] = 1.0
    assert (np.abs(fd1 - basis.Pdot[1:-1]).max(axis=0) / scale1).max() < 1e-4


def test_sampled_trajectory_matches_decasteljau():
    rng = np.random.default_rng(42)
    grid = build_time_grid(37, 5.0)
    basis = build_basis(grid, 10)
    coeffs = rng.normal(size=11)
    sampled = basis.P @ coeffs
    tau = grid.samples / grid.duration
    direct = np.array([decasteljau(coeffs, t) for t in tau])
    np.testing.assert_allclose(sampled, direct, atol=1e-10)


def test_sampled_trajectory_matches_horner_monomial():
    rng = np.random.default_rng(7)
    grid = build_time_grid(23, 2.0)
    basis = build_basis(grid, 7, BasisKind.MONOMIAL)
    coeffs = rng.normal(size=8)
    sampled = basis.P @ coeffs
    tau = grid.samples / grid.duration
    direct = np.array([horner(coeffs, t) for t in tau])
    np.testing.assert_allclose(sampled, direct, atol=1e-10)


@pytest.mark.parametrize("kind", [BasisKind.BERNSTEIN, BasisKind.MONOMIAL])
def test_second_derivative_annihilates_linear(kind):
    basis = build_basis(build_time_grid(50, 3.0), 10, kind)
    coeffs = linear_coefficients(basis, -2.0, 5.0)
    np.testing.assert_allclose(basis.Pddot @ coeffs, 0.0, atol=1e-12)


@pytest.mark.parametrize("kind", [BasisKind.BERNSTEIN, BasisKind.MONOMIAL])
def test_linear_coefficients_trace_the_line(kind):
    grid = build_time_grid(11, 4.0)
    basis = build_basis(grid, 8, kind)
    coeffs = linear_coefficients(basis, 1.0, 9.0)
    expected = 1.0 + (9.0 - 1.0) * grid.samples / grid.duration
    np.testing.assert_allclose(basis.P @ coeffs, expected, atol=1e-10)


def test_degree_one_basis_rows_shape_and_content():
    basis = build_basis(build_time_grid(30, 2.0), 10)
    block = degree_one_basis_rows(basis)
    assert block.shape == (6, 11)
    np.testing.assert_array_equal(block[0], basis.P[0])
    np.testing.assert_array_equal(block[5], basis.Pddot[-1])


@settings(max_examples=30, deadline=None)
@given(
    degree=st.integers(min_value=5, max_value=14),
    m=st.integers(min_value=2, max_value=60),
    duration=st.floats(min_value=0.1, max_value=100.0, allow_nan=False),
)
def test_partition_of_unity_property(degree, m, duration):
    basis = build_basis(build_time_grid(m, duration), degree)
    np.testing.assert_allclose(basis.P.sum(axis=1), 1.0, atol=1e-11)
