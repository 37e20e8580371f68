"""Time grid and sampled polynomial basis matrices.

Every agent's trajectory along one axis is a fixed-degree polynomial,
represented by its coefficient vector.  Sampling the basis functions and
their first two time derivatives on the grid gives three matrices (P,
Pdot, Pddot) so that positions, velocities and accelerations at the grid
times are plain matrix-vector products with the coefficients.

Bases are evaluated in normalized time tau = t / duration; derivative
matrices carry the 1/duration chain-rule factors, which keeps the
conditioning of the basis independent of the traversal time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class BasisKind(str, Enum):
    """Supported polynomial bases."""

    BERNSTEIN = "bernstein"
    MONOMIAL = "monomial"


MIN_DEGREE = 5  # six boundary rows (pos/vel/acc at both ends) need degree+1 >= 6


@dataclass(frozen=True)
class TimeGrid:
    """Uniform sampling of the planning horizon [0, duration]."""

    num_samples: int
    duration: float
    samples: np.ndarray = field(repr=False)

    @property
    def step(self) -> float:
        return self.duration / (self.num_samples - 1)


@dataclass(frozen=True)
class BasisMatrices:
    """Sampled basis matrix and its first two time derivatives.

    Attributes:
        P: (m, n_coeffs) basis values at the grid times.
        Pdot: (m, n_coeffs) first time derivatives (units 1/s).
        Pddot: (m, n_coeffs) second time derivatives (units 1/s^2).
        grid: the time grid the rows correspond to.
        kind: which polynomial family was sampled.
        degree: polynomial degree (n_coeffs - 1).
    """

    P: np.ndarray = field(repr=False)
    Pdot: np.ndarray = field(repr=False)
    Pddot: np.ndarray = field(repr=False)
    grid: TimeGrid
    kind: BasisKind
    degree: int

    @property
    def num_coeffs(self) -> int:
        return self.degree + 1

    @property
    def num_samples(self) -> int:
        return self.grid.num_samples


def build_time_grid(num_samples: int, duration: float) -> TimeGrid:
    """Build a uniform time grid over [0, duration].

    Args:
        num_samples: number of samples, at least 2.
        duration: horizon length in seconds, positive.

    Raises:
        ValueError: if num_samples < 2 or duration <= 0.
    """
    if num_samples < 2:
        raise ValueError(f"num_samples must be >= 2, got {num_samples}")
    if not duration > 0:
        raise ValueError(f"duration must be positive, got {duration}")
    samples = np.linspace(0.0, float(duration), num_samples)
    samples.setflags(write=False)
    return TimeGrid(num_samples=num_samples, duration=float(duration), samples=samples)


def bernstein_rows(tau: np.ndarray, degree: int) -> np.ndarray:
    """Values of the degree-`degree` Bernstein polynomials at tau (shape (m, degree+1))."""
    k = np.arange(degree + 1)
    binom = np.array([math.comb(degree, int(j)) for j in k], dtype=float)
    t = tau[:, None]
    # 0**0 == 1 under numpy power, which is the convention the endpoints need.
    return binom * t**k * (1.0 - t) ** (degree - k)


def _bernstein_matrices(tau: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bernstein basis and its tau-derivatives via degree reduction."""
    b = bernstein_rows(tau, degree)

    lower1 = bernstein_rows(tau, degree - 1)
    db = np.zeros_like(b)
    db[:, : degree] -= lower1
    db[:, 1:] += lower1
    db *= degree

    lower2 = bernstein_rows(tau, degree - 2)
    ddb = np.zeros_like(b)
    ddb[:, : degree - 1] += lower2
    ddb[:, 1:degree] -= 2.0 * lower2
    ddb[:, 2:] += lower2
    ddb *= degree * (degree - 1)
    return b, db, ddb


def _monomial_matrices(tau: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Monomial basis tau**k and its tau-derivatives."""
    k = np.arange(degree + 1)
    t = tau[:, None]
    b = t**k
    db = np.zeros_like(b)
    db[:, 1:] = k[1:] * t ** (k[1:] - 1)
    ddb = np.zeros_like(b)
    ddb[:, 2:] = k[2:] * (k[2:] - 1) * t ** (k[2:] - 2)
    return b, db, ddb


def build_basis(grid: TimeGrid, degree: int, kind: BasisKind = BasisKind.BERNSTEIN) -> BasisMatrices:
    """Sample a polynomial basis and its time derivatives on a grid.

    Args:
        grid: time grid to sample on.
        degree: polynomial degree, at least MIN_DEGREE.
        kind: Bernstein (default, well conditioned at degree 10) or
            monomial (kept as a debug option).

    Raises:
        ValueError: if degree < MIN_DEGREE.
    """
    if degree < MIN_DEGREE:
        raise ValueError(f"degree must be >= {MIN_DEGREE}, got {degree}")
    tau = grid.samples / grid.duration
    if kind == BasisKind.BERNSTEIN:
        b, db, ddb = _bernstein_matrices(tau, degree)
    elif kind == BasisKind.MONOMIAL:
        b, db, ddb = _monomial_matrices(tau, degree)
    else:  # pragma: no cover - enum exhausts the options
        raise ValueError(f"unknown basis kind {kind!r}")
    inv_t = 1.0 / grid.duration
    p, pdot, pddot = b, db * inv_t, ddb * inv_t**2
    for arr in (p, pdot, pddot):
        arr.setflags(write=False)
    return BasisMatrices(P=p, Pdot=pdot, Pddot=pddot, grid=grid, kind=kind, degree=degree)


def linear_coefficients(basis: BasisMatrices, start: float, end: float) -> np.ndarray:
    """Coefficients whose sampled trajectory is the straight line start -> end.

    Exact for both basis kinds: the line lies in the span of every
    polynomial basis of degree >= 1.
    """
    n = basis.num_coeffs
    coeffs = np.zeros(n)
    if basis.kind == BasisKind.BERNSTEIN:
        frac = np.arange(n) / basis.degree
        coeffs = start + frac * (end - start)
    else:
        coeffs[0] = start
        coeffs[1] = end - start
    return coeffs


def degree_one_basis_rows(basis: BasisMatrices) -> np.ndarray:
    """Rows [P_1; Pdot_1; Pddot_1; P_m; Pdot_m; Pddot_m] pinning both endpoints.

    This is the 6 x n_coeffs block that stacks position, velocity and
    acceleration rows at the first and last sample; it is the per-agent
    building block of the equality constraints.
    """
    return np.vstack(
        [
            basis.P[0],
            basis.Pdot[0],
            basis.Pddot[0],
            basis.P[-1],
            basis.Pdot[-1],
            basis.Pddot[-1],
        ]
    )
