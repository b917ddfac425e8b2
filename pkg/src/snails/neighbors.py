"""Fixed-radius neighbour search and Gilbert-graph clustering.

Points within ``radius`` of each other (ties included) are adjacent. In one
dimension the index is a position-sorted array answered by binary search;
otherwise a uniform grid with cell side equal to the radius, so every
neighbour of a point lives in the 3**d surrounding cells.
"""
from __future__ import annotations

import itertools
import math
from collections import defaultdict, deque
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .rng import Box, sample_poisson_points


class NeighborIndex:
    """Immutable radius-query index over ``(id, position)`` pairs."""

    def __init__(self, ids, positions, radius: float, d: int | None = None):
        if not radius > 0:
            raise InvalidParameterError(f"radius must be positive, got {radius}")
        ids = np.asarray(ids, dtype=np.int64).ravel()
        positions = np.asarray(positions, dtype=float)
        if d is None:
            d = positions.shape[1] if positions.ndim == 2 else 1
        positions = positions.reshape(len(ids), d)
        if len(np.unique(ids)) != len(ids):
            raise InvalidParameterError("duplicate ids in neighbour index")
        self.d = d
        self.radius = float(radius)
        self.ids = ids
        self.positions = positions
        self._row = {int(i): k for k, i in enumerate(ids)}
        if d == 1:
            order = np.argsort(positions[:, 0], kind="stable")
            self._sorted_x = positions[order, 0]
            self._sorted_rows = order
        else:
            cells = defaultdict(list)
            keys = np.floor(positions / self.radius).astype(np.int64)
            for row, key in enumerate(map(tuple, keys)):
                cells[key].append(row)
            self._cells = {k: np.asarray(v, dtype=np.int64) for k, v in cells.items()}
            self._offsets = list(itertools.product((-1, 0, 1), repeat=d))

    def __len__(self):
        return len(self.ids)

    def __contains__(self, pid) -> bool:
        return int(pid) in self._row

    def position(self, pid) -> np.ndarray:
        try:
            return self.positions[self._row[int(pid)]]
        except KeyError:
            raise InvalidParameterError(f"unknown id {pid}") from None

    def _candidate_rows(self, p: np.ndarray) -> np.ndarray:
        if self.d == 1:
            # widened by a few ulps; the exact test below decides
            reach = self.radius * (1.0 + 1e-12)
            lo = np.searchsorted(self._sorted_x, p[0] - reach, side="left")
            hi = np.searchsorted(self._sorted_x, p[0] + reach, side="right")
            return self._sorted_rows[lo:hi]
        base = np.floor(p / self.radius).astype(np.int64)
        found = [self._cells.get(tuple(base + off)) for off in self._offsets]
        found = [f for f in found if f is not None]
        if not found:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(found)

    def query_rows(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float).reshape(self.d)
        rows = self._candidate_rows(p)
        if len(rows) == 0:
            return rows
        diff = self.positions[rows] - p
        keep = (diff**2).sum(axis=1) <= self.radius * self.radius
        return np.sort(rows[keep])

    def query(self, p) -> np.ndarray:
        """Sorted ids at Euclidean distance <= radius from ``p``."""
        return np.sort(self.ids[self.query_rows(p)])


def build_index(points, d: int, radius: float) -> NeighborIndex:
    """Build an index from a sequence of ``(id, position)`` pairs."""
    points = list(points)
    if not points:
        return NeighborIndex(np.empty(0, dtype=np.int64), np.empty((0, d)), radius, d)
    ids = [pid for pid, _ in points]
    pos = np.array([np.atleast_1d(p) for _, p in points], dtype=float)
    return NeighborIndex(ids, pos, radius, d)


@dataclass(frozen=True)
class ClusterResult:
    members: frozenset
    touches_boundary: bool = False

    def __len__(self):
        return len(self.members)


def gilbert_cluster(index: NeighborIndex, seed, region: Box | None = None) -> ClusterResult:
    """All ids reachable from ``seed`` by hops of length <= radius.

    If ``region`` is given, ``touches_boundary`` reports whether some member
    lies within one radius of the region's boundary, i.e. whether the cluster
    may continue outside the sampled window.
    """
    if seed not in index:
        raise InvalidParameterError(f"unknown seed {seed}")
    start = index._row[int(seed)]
    seen = np.zeros(len(index), dtype=bool)
    seen[start] = True
    queue = deque([start])
    while queue:
        row = queue.popleft()
        for nb in index.query_rows(index.positions[row]):
            if not seen[nb]:
                seen[nb] = True
                queue.append(nb)
    rows = np.flatnonzero(seen)
    touches = False
    if region is not None and len(rows):
        pos = index.positions[rows]
        r = index.radius
        touches = bool(np.any(pos - r <= region.lo) or np.any(pos + r >= region.hi))
    return ClusterResult(frozenset(int(i) for i in index.ids[rows]), touches)


def brute_force_cluster(positions, seed_rows, radius: float) -> set:
    """O(n^2) BFS over the full pairwise-distance matrix; returns row indices.

    Independent reference for :func:`gilbert_cluster` and the simulator's
    chain-infection closure.
    """
    pos = np.asarray(positions, dtype=float)
    if pos.ndim == 1:
        pos = pos[:, None]
    n = len(pos)
    if n == 0:
        return set()
    d2 = ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(axis=2)
    adj = d2 <= radius * radius
    seen = set(int(s) for s in seed_rows)
    stack = list(seen)
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(adj[i]):
            j = int(j)
            if j not in seen:
                seen.add(j)
                stack.append(j)
    return seen


@dataclass
class PercolationPoint:
    lam: float
    box_size: float
    mean_cluster_size: float
    ci_low: float
    ci_high: float
    boundary_touch_freq: float
    n_samples: int


def percolation_scan(lambdas, d: int, box_sizes, n_samples: int, rng, radius: float = 1.0):
    """Origin-seeded Gilbert cluster statistics for a grid of intensities.

    A point is added at the origin of a cube of side ``box_size`` carrying a
    Poisson field; for each sample the origin's cluster size and whether it
    reaches the cube boundary are recorded. ``rng`` is a numpy Generator.
    """
    if d < 1:
        raise InvalidParameterError("d must be >= 1")
    if isinstance(box_sizes, (int, float)):
        box_sizes = [box_sizes]
    out = []
    for lam in lambdas:
        for size in box_sizes:
            region = Box.cube(size / 2.0, d)
            sizes = np.empty(n_samples)
            touches = np.zeros(n_samples, dtype=bool)
            for k in range(n_samples):
                pts = sample_poisson_points(rng, lam, region)
                pos = np.vstack([np.zeros((1, d)), pts])
                index = NeighborIndex(np.arange(len(pos)), pos, radius, d)
                cl = gilbert_cluster(index, 0, region)
                sizes[k] = len(cl)
                touches[k] = cl.touches_boundary
            mean = float(sizes.mean()) if n_samples else math.nan
            se = float(sizes.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
            out.append(PercolationPoint(float(lam), float(size), mean, mean - 1.96 * se,
                                        mean + 1.96 * se, float(touches.mean()) if n_samples else math.nan,
                                        n_samples))
    return out
