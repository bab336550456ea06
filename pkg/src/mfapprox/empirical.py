"""Empirical measures and exact quadratic Wasserstein distances between them.

An :class:`EmpiricalMeasure` is the uniform atomic measure
``(1/N) * sum_i delta_{x_i}`` attached to a particle configuration.  For two
clouds of equal size the optimal coupling can be taken to be a permutation
(Birkhoff), so ``W2`` reduces to a linear assignment problem:

    W2(mu, nu)^2 = min_pi (1/N) * sum_i |x_i - y_{pi(i)}|^2

In one dimension the monotone (sorted) matching is optimal; in higher
dimensions the assignment is solved exactly.
"""

from __future__ import annotations

import csv
import itertools
import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ShapeError

__all__ = [
    "EmpiricalMeasure",
    "CouplingPlan",
    "make_empirical",
    "wasserstein2",
    "brute_force_w2",
    "moment",
    "read_cloud_csv",
    "write_cloud_csv",
]

BRUTE_FORCE_MAX_N = 9


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Uniform atomic measure on ``N`` points of ``R^d``.

    ``points`` has shape ``(N, d)`` and is stored read-only.  Point order is
    preserved for bookkeeping but carries no meaning for the measure.
    """

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=float)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def N(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def integrate(self, func) -> float:
        """Return ``<mu, func>`` for a vectorised ``func: (M, d) -> (M,)``."""
        return float(np.mean(func(self.points)))

    def mean(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def variance(self) -> float:
        """Total variance ``<mu, |x - mean|^2>``."""
        centred = self.points - self.mean()
        return float(np.mean(np.sum(centred**2, axis=1)))

    def __repr__(self) -> str:
        return f"EmpiricalMeasure(N={self.N}, d={self.d})"


@dataclass(frozen=True)
class CouplingPlan:
    """Optimal permutation coupling between two equal-size clouds.

    ``permutation[i] = j`` transports atom ``i`` of the first measure onto atom
    ``j`` of the second; ``cost`` is ``(1/N) sum_i |x_i - y_j|^2``.
    """

    permutation: np.ndarray
    cost: float = field(default=0.0)

    def __post_init__(self) -> None:
        perm = np.asarray(self.permutation, dtype=np.intp)
        n = perm.shape[0]
        if perm.ndim != 1 or not np.array_equal(np.sort(perm), np.arange(n)):
            raise ValueError("permutation must be a bijection of {0..N-1}")
        perm.setflags(write=False)
        object.__setattr__(self, "permutation", perm)
        if self.cost < 0:
            raise ValueError("coupling cost must be nonnegative")


def make_empirical(points: Sequence[Sequence[float]] | np.ndarray) -> EmpiricalMeasure:
    """Build ``mu^N(x)`` from a list of ``N`` points of equal dimension.

    A flat sequence of scalars is read as ``N`` points in dimension one.

    Raises:
        ValueError: if the list is empty, ragged, or contains non-finite values.
    """
    if isinstance(points, np.ndarray):
        arr = np.array(points, dtype=float)
    else:
        rows = list(points)
        if not rows:
            raise ValueError("an empirical measure needs at least one point")
        if all(np.ndim(r) == 0 for r in rows):
            arr = np.asarray(rows, dtype=float)
        else:
            lengths = {len(r) if np.ndim(r) == 1 else -1 for r in rows}
            if len(lengths) != 1 or -1 in lengths:
                raise ValueError("ragged point list: every point needs the same dimension")
            arr = np.asarray(rows, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"points must form an (N, d) array, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError("an empirical measure needs at least one point of positive dimension")
    if not np.all(np.isfinite(arr)):
        raise ValueError("points must be finite")
    return EmpiricalMeasure(arr)


def _check_pair(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> None:
    if mu.N != nu.N:
        raise ShapeError(f"equal-size clouds required, got N={mu.N} and N={nu.N}")
    if mu.d != nu.d:
        raise ShapeError(f"dimension mismatch: d={mu.d} vs d={nu.d}")


def _pair_cost(x: np.ndarray, y: np.ndarray, perm: np.ndarray) -> float:
    sq = np.sum((x - y[perm]) ** 2, axis=1)
    # fsum is exactly rounded, so the result does not depend on atom order
    return math.fsum(sq.tolist()) / x.shape[0]


def _group_ids(values: np.ndarray, order: np.ndarray) -> np.ndarray:
    """Rank of each value among the distinct values (ties share a rank)."""
    sorted_vals = values[order]
    new_group = np.empty(len(values), dtype=bool)
    new_group[0] = True
    new_group[1:] = sorted_vals[1:] != sorted_vals[:-1]
    ranks = np.cumsum(new_group) - 1
    out = np.empty(len(values), dtype=np.intp)
    out[order] = ranks
    return out


def _sorted_plan_1d(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Lexicographically smallest optimal permutation for d = 1.

    The comonotone coupling is the unique optimal coupling for the squared
    cost, so the optimal permutations are exactly those reproducing the
    number of pairs between each group of tied ``x`` values and each group of
    tied ``y`` values.  Any choice inside those counts is optimal, which makes
    a greedy smallest-index choice both feasible and lexicographically minimal.
    """
    n = len(x)
    ox = np.argsort(x, kind="stable")
    oy = np.argsort(y, kind="stable")
    perm = np.empty(n, dtype=np.intp)
    perm[ox] = oy
    has_ties = np.any(np.diff(x[ox]) == 0) or np.any(np.diff(y[oy]) == 0)
    if not has_ties:
        return perm

    gx = _group_ids(x, ox)
    gy = _group_ids(y, oy)
    counts: dict[tuple[int, int], int] = {}
    for p in range(n):
        key = (int(gx[ox[p]]), int(gy[oy[p]]))
        counts[key] = counts.get(key, 0) + 1
    pool: dict[int, deque[int]] = {}
    for j in range(n):  # ascending indices inside each group
        pool.setdefault(int(gy[j]), deque()).append(j)
    # per x-group heap of (smallest free y index, y-group); entries refresh lazily
    heaps: dict[int, list[tuple[int, int]]] = {}
    for g, h in counts:
        heaps.setdefault(g, []).append((pool[h][0], h))
    for heap in heaps.values():
        heapq.heapify(heap)

    for i in range(n):
        g = int(gx[i])
        heap = heaps[g]
        while True:
            head, h = heap[0]
            if counts[(g, h)] == 0:
                heapq.heappop(heap)
            elif pool[h][0] != head:
                heapq.heapreplace(heap, (pool[h][0], h))
            else:
                break
        perm[i] = pool[h].popleft()
        counts[(g, h)] -= 1
        if counts[(g, h)] == 0:
            heapq.heappop(heap)
        else:
            heapq.heapreplace(heap, (pool[h][0], h))
    return perm


def _dual_potentials(cost: np.ndarray, perm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dual variables (u, v) certifying an optimal assignment.

    Solves ``v_j <= v_k + C[owner(k), j] - C[owner(k), k]`` by vectorised
    Bellman-Ford, then sets ``u_i = C[i, perm[i]] - v[perm[i]]``.
    """
    n = cost.shape[0]
    owner = np.empty(n, dtype=np.intp)
    owner[perm] = np.arange(n)
    matched = cost[owner, np.arange(n)]
    weights = cost[owner, :] - matched[:, None]
    v = np.zeros(n)
    for _ in range(n + 1):
        relaxed = np.minimum(v, (v[:, None] + weights).min(axis=0))
        if np.array_equal(relaxed, v):
            break
        v = relaxed
    u = cost[np.arange(n), perm] - v[perm]
    return u, v


def _lexicographic_assignment(cost: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Rotate an optimal assignment into the lexicographically smallest optimal one.

    Works on the graph of tight edges (zero reduced cost).  Row ``i`` may move
    to a smaller column ``j`` only if the displaced rows can be re-seated along
    tight edges ending at the column ``i`` releases; that search is a reverse
    breadth-first sweep over the still-unfixed rows.
    """
    n = cost.shape[0]
    u, v = _dual_potentials(cost, perm)
    scale = max(1.0, float(np.max(np.abs(cost))))
    tight = (cost - u[:, None] - v[None, :]) <= 1e-11 * scale
    if np.count_nonzero(tight) == n:
        return perm

    perm = perm.copy()
    owner = np.empty(n, dtype=np.intp)
    owner[perm] = np.arange(n)
    free_rows = np.ones(n, dtype=bool)
    free_cols = np.ones(n, dtype=bool)
    cols = np.arange(n)

    for i in range(n):
        free_rows[i] = False
        target = perm[i]
        candidates = cols[tight[i] & free_cols & (cols < target)]
        if candidates.size:
            nxt = np.full(n, -1, dtype=np.intp)
            reached_rows = np.zeros(n, dtype=bool)
            reached_cols = np.zeros(n, dtype=bool)
            reached_cols[target] = True
            frontier = np.array([target])
            while frontier.size:
                hits = tight[:, frontier] & (free_rows & ~reached_rows)[:, None]
                rows = np.flatnonzero(hits.any(axis=1))
                if rows.size == 0:
                    break
                nxt[rows] = frontier[np.argmax(hits[rows], axis=1)]
                reached_rows[rows] = True
                new_cols = perm[rows]
                new_cols = new_cols[~reached_cols[new_cols]]
                reached_cols[new_cols] = True
                frontier = new_cols
            movable = candidates[reached_rows[owner[candidates]]]
            if movable.size:
                j = int(movable[0])
                k = int(owner[j])
                perm[i] = j
                owner[j] = i
                while True:
                    c = int(nxt[k])
                    perm[k] = c
                    displaced = int(owner[c])
                    owner[c] = k
                    if c == target:
                        break
                    k = displaced
        free_cols[perm[i]] = False
    return perm


def wasserstein2(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> tuple[float, CouplingPlan]:
    """Exact ``W2`` between two equal-size empirical measures.

    Returns the distance and the optimal permutation coupling.  Among optimal
    permutations the lexicographically smallest one is returned.

    Raises:
        ShapeError: if the particle counts or dimensions differ.
    """
    _check_pair(mu, nu)
    x, y = mu.points, nu.points
    if mu.d == 1:
        perm = _sorted_plan_1d(x[:, 0], y[:, 0])
    else:
        sq = np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=2)
        _, perm = linear_sum_assignment(sq)
        perm = _lexicographic_assignment(sq, np.asarray(perm, dtype=np.intp))
    cost = _pair_cost(x, y, perm)
    return math.sqrt(cost), CouplingPlan(perm, cost)


def brute_force_w2(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """``W2`` by enumerating all ``N!`` permutations (oracle, ``N <= 9``)."""
    _check_pair(mu, nu)
    n = mu.N
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force limited to N <= {BRUTE_FORCE_MAX_N}, got N={n}")
    sq = np.sum((mu.points[:, None, :] - nu.points[None, :, :]) ** 2, axis=2)
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    totals = sq[np.arange(n), perms].sum(axis=1)
    return math.sqrt(max(float(totals.min()) / n, 0.0))


def moment(mu: EmpiricalMeasure, p: int) -> float:
    """``||mu||_p = (<mu, |x|^p>)^(1/p)``."""
    if p < 1:
        raise ValueError("moment order must be >= 1")
    norms = np.linalg.norm(mu.points, axis=1)
    return float(np.mean(norms**p) ** (1.0 / p))


def read_cloud_csv(path: str | Path) -> EmpiricalMeasure:
    """Read a point cloud: one particle per row, ``d`` columns, no header."""
    rows: list[list[float]] = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                rows.append([float(cell) for cell in row])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: not a number ({exc})") from None
    return make_empirical(rows)


def write_cloud_csv(path: str | Path, points: np.ndarray) -> None:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in pts:
            writer.writerow([repr(float(v)) for v in row])
