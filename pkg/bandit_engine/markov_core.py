#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""Finite Markov chains: representation, sampling and exact analysis.

The environment draws every global and local transition through this
module, and the regret-bound evaluator reads stationary distributions,
second-eigenvalue moduli and mean hitting times from it.
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
import scipy.linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from sim_common import FIXED_POINT_TOL, STRUCTURAL_TOL, ChainValidationError


SAMPLER_BLOCK = 4096


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic matrix; row index is the source state."""

    rows: np.ndarray
    _cumulative: tuple = field(init=False, repr=False)

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] != rows.shape[1] or rows.shape[0] < 1:
            raise ChainValidationError(
                f"transition matrix must be square with n >= 1, got shape {rows.shape}"
            )
        for index, row in enumerate(rows):
            if not np.all(np.isfinite(row)):
                raise ChainValidationError(f"row {index} contains a non-finite entry: {row.tolist()}")
            if np.any(row < 0.0) or np.any(row > 1.0):
                raise ChainValidationError(f"row {index} has an entry outside [0, 1]: {row.tolist()}")
            total = math.fsum(row)
            if abs(total - 1.0) > STRUCTURAL_TOL:
                raise ChainValidationError(f"row {index} sums to {total!r}, expected 1")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        cumulative = tuple(
            tuple(float(value) for value in np.cumsum(row)) for row in rows
        )
        object.__setattr__(self, "_cumulative", cumulative)

    @classmethod
    def from_rows(cls, rows) -> "TransitionMatrix":
        return cls(np.asarray(rows, dtype=np.float64))

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    def cumulative_row(self, x: int) -> tuple:
        return self._cumulative[x]

    def to_list(self) -> list:
        return self.rows.tolist()


@dataclass(frozen=True)
class ChainProperties:
    irreducible: bool
    aperiodic: bool

    @property
    def ergodic(self) -> bool:
        return self.irreducible and self.aperiodic


@dataclass(frozen=True, eq=False)
class ChainAnalysis:
    stationary: np.ndarray
    slem: float
    hitting: np.ndarray

    @property
    def max_hitting_time(self) -> float:
        n = self.hitting.shape[0]
        if n == 1:
            return 0.0
        off_diagonal = self.hitting[~np.eye(n, dtype=bool)]
        return float(off_diagonal.max())


def _adjacency(P: TransitionMatrix) -> csr_matrix:
    return csr_matrix((P.rows > 0.0).astype(np.int8))


def _class_period(adjacency: csr_matrix, members: np.ndarray) -> int:
    """Period of one strongly connected class (0 if it carries no cycle)."""
    member_set = set(int(m) for m in members)
    root = int(members[0])
    # BFS levels restricted to the class; every in-class edge u->v then
    # contributes level[u] + 1 - level[v] to the gcd.
    level = {root: 0}
    frontier = [root]
    while frontier:
        next_frontier = []
        for u in frontier:
            for v in adjacency.indices[adjacency.indptr[u]:adjacency.indptr[u + 1]]:
                v = int(v)
                if v in member_set and v not in level:
                    level[v] = level[u] + 1
                    next_frontier.append(v)
        frontier = next_frontier

    differences = []
    for u in member_set:
        for v in adjacency.indices[adjacency.indptr[u]:adjacency.indptr[u + 1]]:
            v = int(v)
            if v in member_set:
                differences.append(level[u] + 1 - level[v])
    if not differences:
        return 0
    return reduce(math.gcd, (abs(d) for d in differences))


def period(P: TransitionMatrix) -> int:
    """Period of an irreducible chain (1 means aperiodic)."""
    _require_irreducible(P, "period")
    adjacency = _adjacency(P)
    return _class_period(adjacency, np.arange(P.n))


def validate(P: TransitionMatrix) -> ChainProperties:
    """Irreducibility via strong connectivity, aperiodicity via the cycle-length gcd.

    For a reducible chain the aperiodic flag reports whether every strongly
    connected class that carries a cycle has period 1.
    """
    adjacency = _adjacency(P)
    n_classes, labels = connected_components(adjacency, directed=True, connection="strong")
    irreducible = n_classes == 1
    periods = []
    for label in range(n_classes):
        members = np.flatnonzero(labels == label)
        class_period = _class_period(adjacency, members)
        if class_period:
            periods.append(class_period)
    aperiodic = bool(periods) and all(p == 1 for p in periods)
    return ChainProperties(irreducible=irreducible, aperiodic=aperiodic)


def require_ergodic(P: TransitionMatrix, name: str) -> None:
    props = validate(P)
    if not props.irreducible:
        raise ChainValidationError(f"{name}: chain is not irreducible")
    if not props.aperiodic:
        raise ChainValidationError(f"{name}: chain is periodic (period {period(P)})")


def _require_irreducible(P: TransitionMatrix, what: str) -> None:
    if not validate(P).irreducible:
        raise ChainValidationError(f"{what} needs an irreducible chain")


def stationary_distribution(P: TransitionMatrix) -> np.ndarray:
    """Solve pi P = pi with sum(pi) = 1 directly."""
    _require_irreducible(P, "stationary_distribution")
    n = P.n
    system = P.rows.T - np.eye(n)
    system[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        pi = scipy.linalg.solve(system, rhs)
    except scipy.linalg.LinAlgError as exc:
        raise ChainValidationError(f"stationary system is singular: {exc}") from exc
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    residual = np.max(np.abs(pi @ P.rows - pi))
    if residual > FIXED_POINT_TOL:
        raise ChainValidationError(f"stationary fixed point residual {residual:.3e} too large")
    return pi


def second_eigenvalue_modulus(P: TransitionMatrix) -> float:
    """Modulus of the second-largest eigenvalue (SLEM)."""
    if P.n == 1:
        return 0.0
    eigenvalues = scipy.linalg.eigvals(P.rows)
    unit = int(np.argmin(np.abs(eigenvalues - 1.0)))
    rest = np.delete(eigenvalues, unit)
    return float(np.max(np.abs(rest)))


def mean_hitting_times(P: TransitionMatrix) -> np.ndarray:
    """M[x][y] = expected steps to first reach y from x, M[y][y] = 0."""
    _require_irreducible(P, "mean_hitting_times")
    n = P.n
    hitting = np.zeros((n, n))
    if n == 1:
        return hitting
    for target in range(n):
        others = [state for state in range(n) if state != target]
        system = np.eye(n - 1) - P.rows[np.ix_(others, others)]
        try:
            times = scipy.linalg.solve(system, np.ones(n - 1))
        except scipy.linalg.LinAlgError as exc:
            raise ChainValidationError(
                f"hitting-time system for target {target} is singular: {exc}"
            ) from exc
        hitting[others, target] = times
    return hitting


def analyze(P: TransitionMatrix) -> ChainAnalysis:
    return ChainAnalysis(
        stationary=stationary_distribution(P),
        slem=second_eigenvalue_modulus(P),
        hitting=mean_hitting_times(P),
    )


def _pick(cumulative, u: float) -> int:
    index = bisect_right(cumulative, u)
    if index < len(cumulative):
        return index
    # Float cumsum ended below u: fall back to the last state with mass.
    return bisect_left(cumulative, cumulative[-1])


def sample_next(P: TransitionMatrix, x: int, rng: np.random.Generator) -> int:
    """Draw the successor of x; consumes exactly one uniform from rng."""
    return _pick(P.cumulative_row(x), float(rng.random()))


class ChainSampler:
    """Drive one chain from its own stream, one uniform per transition.

    Uniforms are drawn in blocks; the sequence consumed is the same as one
    ``rng.random()`` call per step.
    """

    def __init__(self, P: TransitionMatrix, rng: np.random.Generator) -> None:
        self.P = P
        self.rng = rng
        self._cumulative = [list(row) for row in (P.cumulative_row(x) for x in range(P.n))]
        self._buffer: list = []
        self._cursor = 0

    def uniform(self) -> float:
        if self._cursor >= len(self._buffer):
            self._buffer = self.rng.random(SAMPLER_BLOCK).tolist()
            self._cursor = 0
        u = self._buffer[self._cursor]
        self._cursor += 1
        return u

    def initial(self, distribution) -> int:
        cumulative = np.cumsum(np.asarray(distribution, dtype=np.float64)).tolist()
        return _pick(cumulative, self.uniform())

    def next(self, x: int) -> int:
        return _pick(self._cumulative[x], self.uniform())
