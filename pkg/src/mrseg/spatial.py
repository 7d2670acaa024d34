"""Voxel grid partition and exact nearest-neighbor search."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud

# Relative slack used to detect candidate sets whose k-th distance may be tied.
_TIE_RTOL = 1e-9


def voxel_keys(positions: np.ndarray, origin: np.ndarray, voxel_size: float) -> np.ndarray:
    """Integer voxel coordinates ``floor((p - origin) / size)`` per point."""
    return np.floor((np.asarray(positions) - origin) / voxel_size).astype(np.int64)


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Partition of a cloud into voxels.

    Occupied voxels are stored in lexicographic key order. ``point_voxel[i]``
    is the row of ``keys`` holding point ``i``; ``order``/``offsets`` form a
    CSR layout so ``bucket(j)`` lists the point indices of voxel ``j`` in
    ascending order.
    """

    voxel_size: float
    origin: np.ndarray
    keys: np.ndarray
    point_voxel: np.ndarray
    order: np.ndarray
    offsets: np.ndarray

    def __len__(self) -> int:
        return len(self.keys)

    def bucket(self, j: int) -> np.ndarray:
        return self.order[self.offsets[j]:self.offsets[j + 1]]

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def buckets(self) -> dict[tuple[int, int, int], np.ndarray]:
        return {tuple(int(v) for v in k): self.bucket(j) for j, k in enumerate(self.keys)}


def build_voxel_grid(
    cloud: PointCloud | np.ndarray,
    voxel_size: float,
    origin: Optional[np.ndarray] = None,
) -> VoxelGrid:
    """Bucket points by voxel.

    ``origin`` defaults to the component-wise minimum of the positions; pass
    a stored origin to reproduce another grid exactly.
    """
    pos = cloud.positions if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if not voxel_size > 0:
        raise ValueError(f"voxel size must be positive, got {voxel_size}")
    if len(pos) == 0:
        raise ValueError("cannot build a voxel grid over an empty cloud")
    origin = pos.min(axis=0) if origin is None else np.asarray(origin, dtype=np.float64)
    keys = voxel_keys(pos, origin, voxel_size)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    offsets = np.zeros(len(uniq) + 1, dtype=np.int64)
    np.cumsum(np.bincount(inverse, minlength=len(uniq)), out=offsets[1:])
    return VoxelGrid(float(voxel_size), origin.copy(), uniq, inverse, order, offsets)


def lookup_keys(table: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Row index of each query key in ``table`` (lexicographically sorted, unique), or -1."""
    if len(table) == 0:
        return np.full(len(queries), -1, dtype=np.int64)
    both = np.concatenate([table, queries])
    _, inv = np.unique(both, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    slot = np.full(inv.max() + 1, -1, dtype=np.int64)
    slot[inv[: len(table)]] = np.arange(len(table))
    return slot[inv[len(table):]]


class NeighborIndex:
    """Exact k-nearest-neighbor queries over a fixed set of positions.

    Backed by a kd-tree; candidate sets are re-ranked with exactly computed
    squared distances and ties are resolved by lowest point index, so results
    match a brute-force scan bit for bit.
    """

    def __init__(self, positions: np.ndarray | PointCloud, workers: int = 1):
        if isinstance(positions, PointCloud):
            positions = positions.positions
        self.positions = np.ascontiguousarray(positions, dtype=np.float64)
        if len(self.positions) == 0:
            raise ValueError("cannot index an empty point set")
        self.workers = workers
        self._tree = cKDTree(self.positions)

    def __len__(self) -> int:
        return len(self.positions)

    def knn(self, query: np.ndarray, k: int) -> np.ndarray:
        return self.knn_batch(np.asarray(query, dtype=np.float64).reshape(1, 3), k)[0]

    def nearest(self, query: np.ndarray) -> int:
        return int(self.knn(query, 1)[0])

    def nearest_batch(self, queries: np.ndarray) -> np.ndarray:
        return self.knn_batch(queries, 1)[:, 0]

    def knn_batch(self, queries: np.ndarray, k: int) -> np.ndarray:
        """``(m, k)`` neighbor indices sorted by (distance, index)."""
        n = len(self.positions)
        if k < 1:
            raise ValueError("k must be at least 1")
        if k > n:
            raise ValueError(f"k={k} exceeds the number of indexed points ({n})")
        q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        if len(q) == 0:
            return np.empty((0, k), dtype=np.int64)
        if k == n:
            return np.concatenate([self._rank_all(q[i:i + 256]) for i in range(0, len(q), 256)])
        kk = k + 1
        _, cand = self._tree.query(q, k=kk, workers=self.workers)
        cand = cand.astype(np.int64)
        d2 = ((self.positions[cand] - q[:, None, :]) ** 2).sum(axis=2)
        perm = _row_lexsort(d2, cand)
        d2 = np.take_along_axis(d2, perm, axis=1)
        cand = np.take_along_axis(cand, perm, axis=1)
        kth, nxt = d2[:, k - 1], d2[:, k]
        ambiguous = nxt <= kth * (1 + _TIE_RTOL) + 1e-300
        out = cand[:, :k].copy()
        for row in np.flatnonzero(ambiguous):
            radius = np.sqrt(nxt[row]) * (1 + 1e-6) + 1e-12
            pool = np.asarray(self._tree.query_ball_point(q[row], radius), dtype=np.int64)
            out[row] = self._rank(q[row], pool)[:k]
        return out

    def _rank(self, qi: np.ndarray, pool: np.ndarray) -> np.ndarray:
        d2 = ((self.positions[pool] - qi) ** 2).sum(axis=1)
        return pool[np.lexsort((pool, d2))]

    def _rank_all(self, q: np.ndarray) -> np.ndarray:
        idx = np.broadcast_to(np.arange(len(self.positions)), (len(q), len(self.positions)))
        d2 = ((self.positions[None, :, :] - q[:, None, :]) ** 2).sum(axis=2)
        perm = _row_lexsort(d2, idx)
        return np.take_along_axis(idx, perm, axis=1).copy()


def _row_lexsort(primary: np.ndarray, secondary: np.ndarray) -> np.ndarray:
    """Per-row argsort by ``primary`` then ``secondary``."""
    p2 = np.argsort(secondary, axis=1, kind="stable")
    p1 = np.argsort(np.take_along_axis(primary, p2, axis=1), axis=1, kind="stable")
    return np.take_along_axis(p2, p1, axis=1)
