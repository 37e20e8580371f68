"""Quadratic-program blocks, KKT factorization, and factor reuse.

The per-axis subproblem is an equality-constrained QP whose matrix never
changes across iterations: minimize

    0.5 * c' (Q + rho * A_fc' A_fc) c  -  rho * (A_fc' b_fc)' c
    subject to  A_eq c = b_eq

over the stacked per-agent coefficients c.  Its KKT matrix

    [[Q + rho * A_fc' A_fc,  A_eq'],
     [A_eq,                  0    ]]

depends only on the agent count, obstacle count, discretization and rho,
so it is factorized once per (assembly fingerprint, rho) and every
iteration reduces to matrix-vector products against the cached factors.

The pairwise matrix A_fc is never materialized in the hot path.  Row
block k of A_fc selects +P at the first member of pair k and -P at the
second (agent-obstacle pairs have only the +P slot), i.e. A_fc is the
Kronecker product of a signed pair-incidence matrix S with P.  Products
with A_fc and A_fc' therefore reduce to one small incidence matmul plus
one basis matmul, and A_fc' A_fc = kron(S'S, P'P) exactly.

All products run through the BLAS linked into numpy/scipy, whose
reduction order is fixed for given shapes within one build, so repeated
solves are bitwise reproducible on one machine.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .basis import BasisMatrices, degree_one_basis_rows
from .problem import ProblemSpec

log = logging.getLogger(__name__)

BOUNDARY_ROWS = 6  # position/velocity/acceleration at both endpoints


@dataclass(frozen=True)
class Fingerprint:
    """Identity of an assembled system, minus boundary values.

    Two instances differing only in start/goal states share a fingerprint
    and therefore share factorizations.
    """

    num_agents: int
    num_samples: int
    num_coeffs: int
    num_obstacles: int
    basis_kind: str
    basis_sha: str

    def key(self) -> str:
        text = (
            f"{self.num_agents},{self.num_samples},{self.num_coeffs},"
            f"{self.num_obstacles},{self.basis_kind},{self.basis_sha}"
        )
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def basis_sha(basis: BasisMatrices) -> str:
    h = hashlib.sha256()
    for arr in (basis.P, basis.Pdot, basis.Pddot):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class EqualityBlock:
    """Boundary equality constraints A_eq c = b_eq, per axis.

    A_eq is block-diagonal with one 6 x n_coeffs endpoint block per agent;
    b_eq_* stack [pos0, vel0, acc0, posT, velT, accT] per agent.
    """

    A_eq: np.ndarray = field(repr=False)
    b_eq_x: np.ndarray = field(repr=False)
    b_eq_y: np.ndarray = field(repr=False)
    b_eq_z: np.ndarray = field(repr=False)

    def b_eq(self, axis: int) -> np.ndarray:
        return (self.b_eq_x, self.b_eq_y, self.b_eq_z)[axis]


@dataclass(frozen=True)
class PairwiseBlock:
    """Pairwise difference operator and per-pair safety geometry.

    pair_index lists agent pairs (i, j) in lexicographic order followed by
    (agent, obstacle) pairs; incidence holds the matching signed rows
    (+1 at i, -1 at j for agent pairs; +1 at the agent for obstacle
    pairs).  offsets carries each obstacle's constant position (zero rows
    for agent pairs) so the constant can be folded into right-hand sides.
    """

    pair_index: tuple[tuple[str, int, int], ...]
    incidence: np.ndarray = field(repr=False)  # (p, n) signed
    l_xy: np.ndarray = field(repr=False)  # (p,)
    l_z: np.ndarray = field(repr=False)  # (p,)
    offsets: np.ndarray = field(repr=False)  # (p, 3)
    basis: BasisMatrices = field(repr=False)

    @property
    def num_pairs(self) -> int:
        return self.incidence.shape[0]

    @property
    def num_rows(self) -> int:
        return self.num_pairs * self.basis.num_samples

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        """A_fc @ coeffs: sampled pairwise differences, pair-major (m*p,)."""
        n = self.incidence.shape[1]
        positions = coeffs.reshape(n, -1) @ self.basis.P.T  # (n, m)
        return (self.incidence @ positions).ravel()

    def apply_transpose(self, values: np.ndarray) -> np.ndarray:
        """A_fc' @ values for a pair-major stacked (m*p,) vector."""
        per_pair = values.reshape(self.num_pairs, self.basis.num_samples)
        agg = self.incidence.T @ per_pair  # (n, m)
        return (agg @ self.basis.P).ravel()

    def normal_matrix(self) -> np.ndarray:
        """A_fc' A_fc, exact, via the Kronecker structure."""
        gram = self.incidence.T @ self.incidence
        return np.kron(gram, self.basis.P.T @ self.basis.P)

    def dense(self) -> np.ndarray:
        """Materialize A_fc (tests and small problems only)."""
        return np.kron(self.incidence, self.basis.P)


@dataclass(frozen=True)
class AssembledSystem:
    """All iteration-independent blocks for one problem instance."""

    Q: np.ndarray = field(repr=False)  # block-diagonal smoothness quadratic
    eq: EqualityBlock = field(repr=False)
    pairs: PairwiseBlock = field(repr=False)
    fingerprint: Fingerprint

    @property
    def num_unknowns(self) -> int:
        return self.Q.shape[0]


def assemble(spec: ProblemSpec, basis: BasisMatrices) -> AssembledSystem:
    """Build the smoothness quadratic, equality block, and pairwise block.

    Raises:
        ValueError: if the per-agent endpoint block is rank deficient
            (degenerate basis).
    """
    n = spec.num_agents
    n_v = basis.num_coeffs

    endpoint_block = degree_one_basis_rows(basis)
    if np.linalg.matrix_rank(endpoint_block) < BOUNDARY_ROWS:
        raise ValueError(
            "endpoint constraint block is rank deficient; the basis cannot pin "
            "position, velocity and acceleration at both ends"
        )
    A_eq = np.kron(np.eye(n), endpoint_block)

    b_eq = np.empty((3, BOUNDARY_ROWS * n))
    for i, (s, g) in enumerate(zip(spec.start, spec.goal)):
        for axis in range(3):
            b_eq[axis, 6 * i : 6 * i + 6] = (
                s.position[axis],
                s.velocity[axis],
                s.acceleration[axis],
                g.position[axis],
                g.velocity[axis],
                g.acceleration[axis],
            )
    eq = EqualityBlock(A_eq=A_eq, b_eq_x=b_eq[0], b_eq_y=b_eq[1], b_eq_z=b_eq[2])

    pair_index: list[tuple[str, int, int]] = []
    rows: list[np.ndarray] = []
    l_xy: list[float] = []
    l_z: list[float] = []
    offsets: list[tuple[float, float, float]] = []
    for i in range(n):
        for j in range(i + 1, n):
            row = np.zeros(n)
            row[i], row[j] = 1.0, -1.0
            pair_index.append(("agent", i, j))
            rows.append(row)
            l_xy.append(spec.geometry.l_xy)
            l_z.append(spec.geometry.l_z)
            offsets.append((0.0, 0.0, 0.0))
    for i in range(n):
        for k, obs in enumerate(spec.obstacles):
            row = np.zeros(n)
            row[i] = 1.0
            pair_index.append(("obstacle", i, k))
            rows.append(row)
            geom = spec.obstacle_geometry(obs)
            l_xy.append(geom.l_xy)
            l_z.append(geom.l_z)
            offsets.append(obs.center)
    incidence = np.array(rows).reshape(len(rows), n)
    pairs = PairwiseBlock(
        pair_index=tuple(pair_index),
        incidence=incidence,
        l_xy=np.array(l_xy),
        l_z=np.array(l_z),
        offsets=np.array(offsets).reshape(len(rows), 3),
        basis=basis,
    )

    Q = np.kron(np.eye(n), basis.Pddot.T @ basis.Pddot)
    fp = Fingerprint(
        num_agents=n,
        num_samples=basis.num_samples,
        num_coeffs=n_v,
        num_obstacles=spec.num_obstacles,
        basis_kind=basis.kind.value,
        basis_sha=basis_sha(basis),
    )
    return AssembledSystem(Q=Q, eq=eq, pairs=pairs, fingerprint=fp)


def assemble_for_dimensions(
    num_agents: int,
    num_samples: int,
    degree: int,
    num_obstacles: int = 0,
    duration: float = 10.0,
    basis_kind: str = "bernstein",
) -> AssembledSystem:
    """Assemble a system from dimensions alone, for cache warming.

    The factorized matrix depends only on counts and the basis, never on
    boundary values, geometry, or obstacle positions, so placeholder
    values suffice.
    """
    from .basis import BasisKind, build_basis, build_time_grid
    from .problem import AgentGeometry, BoundaryState, Obstacle, ProblemSpec

    states = tuple(BoundaryState.at_rest((3.0 * i, 0.0, 0.0)) for i in range(num_agents))
    obstacles = tuple(
        Obstacle(center=(3.0 * k, 100.0, 0.0), radius=1.0) for k in range(num_obstacles)
    )
    spec = ProblemSpec(
        start=states,
        goal=states,
        geometry=AgentGeometry(l_xy=1.0, l_z=1.0),
        obstacles=obstacles,
        num_samples=num_samples,
        degree=degree,
        duration=duration,
        basis_kind=BasisKind(basis_kind),
    )
    basis = build_basis(build_time_grid(num_samples, duration), degree, BasisKind(basis_kind))
    return assemble(spec, basis)


class KktFactor:
    """One factorized KKT system for a fixed penalty weight.

    Holds the LU factors of the symmetric saddle-point matrix; solving for
    a new right-hand side is two triangular solves.  Instances are
    immutable after construction and safe to share across threads.
    """

    def __init__(self, rho: float, system: AssembledSystem, lu: np.ndarray, piv: np.ndarray,
                 cache: "FactorCache | None" = None):
        self.rho = rho
        self.system = system
        self.fingerprint = system.fingerprint
        self._lu = lu
        self._piv = piv
        self._cache = cache
        self._num_unknowns = system.num_unknowns

    def solve_with_multipliers(self, b_fc_axis: np.ndarray, b_eq_axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Solve one axis subproblem; returns (coefficients, equality multipliers)."""
        pairs = self.system.pairs
        if b_fc_axis.shape != (pairs.num_rows,):
            raise ValueError(
                f"b_fc has shape {b_fc_axis.shape}, expected ({pairs.num_rows},)"
            )
        n_eq = self.system.eq.A_eq.shape[0]
        if b_eq_axis.shape != (n_eq,):
            raise ValueError(f"b_eq has shape {b_eq_axis.shape}, expected ({n_eq},)")
        rhs = np.concatenate([self.rho * pairs.apply_transpose(b_fc_axis), b_eq_axis])
        sol = lu_solve((self._lu, self._piv), rhs, check_finite=False)
        if self._cache is not None:
            self._cache.count_solve()
        return sol[: self._num_unknowns], sol[self._num_unknowns :]

    def solve(self, b_fc_axis: np.ndarray, b_eq_axis: np.ndarray) -> np.ndarray:
        coeffs, _ = self.solve_with_multipliers(b_fc_axis, b_eq_axis)
        return coeffs

    def kkt_matrix(self) -> np.ndarray:
        """Re-assemble the dense KKT matrix (verification only)."""
        return _kkt_matrix(self.system, self.rho)


def solve_axis(factor: KktFactor, b_fc_axis: np.ndarray, b_eq_axis: np.ndarray) -> np.ndarray:
    """Coefficients minimizing the axis subproblem at the factor's rho."""
    return factor.solve(b_fc_axis, b_eq_axis)


def _kkt_matrix(system: AssembledSystem, rho: float) -> np.ndarray:
    H = system.Q + rho * system.pairs.normal_matrix()
    A = system.eq.A_eq
    n_c, n_eq = H.shape[0], A.shape[0]
    kkt = np.zeros((n_c + n_eq, n_c + n_eq))
    kkt[:n_c, :n_c] = H
    kkt[:n_c, n_c:] = A.T
    kkt[n_c:, :n_c] = A
    return kkt


def factorize(system: AssembledSystem, rho: float, cache: "FactorCache | None" = None) -> KktFactor:
    """Factorize the KKT matrix for one rho.

    Raises:
        ValueError: if rho is negative or the KKT matrix is numerically
            singular (reported with pivot-ratio diagnostics).
    """
    if rho < 0:
        raise ValueError(f"rho must be non-negative, got {rho}")
    kkt = _kkt_matrix(system, rho)
    asym = np.max(np.abs(kkt - kkt.T))
    if asym > 1e-12 * max(1.0, np.max(np.abs(kkt))):
        raise ValueError(f"KKT matrix is not symmetric (max asymmetry {asym:.3e})")
    lu, piv = lu_factor(kkt, check_finite=False)
    diag = np.abs(np.diag(lu))
    if diag.min() <= 1e-14 * diag.max():
        raise ValueError(
            "KKT matrix is numerically singular "
            f"(pivot ratio {diag.min():.3e}/{diag.max():.3e}); "
            "check that the endpoint block has full rank"
        )
    return KktFactor(rho=rho, system=system, lu=lu, piv=piv, cache=cache)


@dataclass(frozen=True)
class RhoSchedule:
    """Increasing penalty weights, advanced in equal iteration blocks."""

    values: tuple[float, ...]
    switch_every: int

    def stage_for(self, iteration: int) -> int:
        return min(iteration // self.switch_every, len(self.values) - 1)

    def value_for(self, iteration: int) -> float:
        return self.values[self.stage_for(iteration)]


def build_rho_schedule(rho_initial: float, growth: float, stages: int, max_iters: int) -> RhoSchedule:
    """Geometric penalty schedule: values[s] = rho_initial * growth**s."""
    if not rho_initial > 0:
        raise ValueError(f"rho_initial must be positive, got {rho_initial}")
    if not growth > 1:
        raise ValueError(f"growth must be > 1, got {growth}")
    if stages < 1:
        raise ValueError(f"stages must be >= 1, got {stages}")
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    values = tuple(rho_initial * growth**s for s in range(stages))
    switch_every = -(-max_iters // stages)  # ceil division
    return RhoSchedule(values=values, switch_every=switch_every)


class FactorCache:
    """Shared store of KKT factorizations keyed by (fingerprint, rho).

    Factorization is single-flight per key; completed factors are
    immutable and shared freely across concurrent solves.  Counters make
    the hot-path contract observable: `factorizations` must not grow once
    a solve loop is running, while `solves` grows by three per iteration.
    """

    def __init__(self, disk_dir: str | os.PathLike | None = None):
        # maps (fingerprint key, rho) -> (lu, piv); factors are rebound to
        # the requesting system so the same data serves every instance
        # sharing the fingerprint
        self._factors: dict[tuple[str, float], tuple[np.ndarray, np.ndarray]] = {}
        self._lock = threading.Lock()
        self._inflight: dict[tuple[str, float], threading.Event] = {}
        self.disk_dir = Path(disk_dir) if disk_dir else None
        self.factorizations = 0
        self.hits = 0
        self.misses = 0
        self.solves = 0

    # -- counters ----------------------------------------------------------
    def count_solve(self) -> None:
        self.solves += 1

    def stats(self) -> dict:
        return {
            "entries": len(self._factors),
            "factorizations": self.factorizations,
            "hits": self.hits,
            "misses": self.misses,
            "solves": self.solves,
        }

    # -- retrieval ---------------------------------------------------------
    def get(self, system: AssembledSystem, rho: float) -> KktFactor:
        """Return the factor for (system fingerprint, rho), building it once."""
        key = (system.fingerprint.key(), float(rho))
        while True:
            with self._lock:
                data = self._factors.get(key)
                if data is not None:
                    self.hits += 1
                    return KktFactor(rho=float(rho), system=system, lu=data[0], piv=data[1], cache=self)
                event = self._inflight.get(key)
                if event is None:
                    self._inflight[key] = threading.Event()
                    break
            event.wait()
        try:
            factor = self._load_one(system, rho)
            if factor is None:
                factor = factorize(system, rho, cache=self)
                built = True
            else:
                built = False
            with self._lock:
                self._factors[key] = (factor._lu, factor._piv)
                if built:
                    self.factorizations += 1
                    self.misses += 1
                else:
                    self.hits += 1
            return factor
        finally:
            with self._lock:
                self._inflight.pop(key).set()

    def prefactorize(self, system: AssembledSystem, schedule: RhoSchedule) -> list[KktFactor]:
        """Build (or fetch) the factor for every schedule stage."""
        return [self.get(system, rho) for rho in schedule.values]

    # -- disk persistence ----------------------------------------------------
    def _entry_dir(self, fingerprint: Fingerprint) -> Path | None:
        if self.disk_dir is None:
            return None
        return self.disk_dir / fingerprint.key()

    def _load_one(self, system: AssembledSystem, rho: float) -> KktFactor | None:
        entry = self._entry_dir(system.fingerprint)
        if entry is None or not (entry / "manifest.json").exists():
            return None
        try:
            manifest = json.loads((entry / "manifest.json").read_text())
            rho_values = manifest["rho_values"]
            if float(rho) not in rho_values:
                return None
            idx = rho_values.index(float(rho))
            with np.load(entry / "factors.npz") as blob:
                lu = blob[f"lu_{idx}"]
                piv = blob[f"piv_{idx}"]
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            log.warning("ignoring unreadable factor cache entry %s: %s", entry, exc)
            return None
        log.info("loaded cached factorization %s rho=%g from %s", system.fingerprint.key(), rho, entry)
        return KktFactor(rho=float(rho), system=system, lu=lu, piv=piv, cache=self)

    def persist(self, system: AssembledSystem, schedule: RhoSchedule) -> dict:
        """Factorize all schedule stages and write them under disk_dir.

        Rewriting with identical content is skipped, keeping rebuilds
        idempotent.  Returns the manifest.
        """
        if self.disk_dir is None:
            raise ValueError("cache has no disk directory configured")
        t0 = time.perf_counter()
        factors = self.prefactorize(system, schedule)
        entry = self._entry_dir(system.fingerprint)
        entry.mkdir(parents=True, exist_ok=True)
        fp = system.fingerprint
        manifest = {
            "fingerprint": fp.key(),
            "num_agents": fp.num_agents,
            "num_samples": fp.num_samples,
            "num_coeffs": fp.num_coeffs,
            "num_obstacles": fp.num_obstacles,
            "basis_kind": fp.basis_kind,
            "basis_sha": fp.basis_sha,
            "rho_values": [f.rho for f in factors],
            "kkt_dimension": factors[0]._lu.shape[0],
        }
        manifest_path = entry / "manifest.json"
        text = json.dumps(manifest, indent=2) + "\n"
        up_to_date = (
            manifest_path.exists()
            and manifest_path.read_text() == text
            and (entry / "factors.npz").exists()
        )
        if not up_to_date:
            blobs = {}
            for idx, f in enumerate(factors):
                blobs[f"lu_{idx}"] = f._lu
                blobs[f"piv_{idx}"] = f._piv
            tmp = entry / "factors.npz.tmp"
            with open(tmp, "wb") as fh:
                np.savez(fh, **blobs)
            os.replace(tmp, entry / "factors.npz")
            tmp_manifest = entry / "manifest.json.tmp"
            tmp_manifest.write_text(text)
            os.replace(tmp_manifest, manifest_path)
        manifest["build_time_s"] = time.perf_counter() - t0
        manifest["bytes"] = (entry / "factors.npz").stat().st_size
        return manifest
