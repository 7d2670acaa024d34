"""One-point-per-voxel subsampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cloud import UNLABELED, PointCloud
from .spatial import VoxelGrid, build_voxel_grid


@dataclass(frozen=True, eq=False)
class SubsampleResult:
    low_cloud: PointCloud  # empty when restored from a map file alone
    rep_index: np.ndarray  # full-cloud index of each low point
    voxel_of: np.ndarray  # (m, 3) voxel key of each low point, lexicographic order
    origin: np.ndarray
    voxel_size: float
    source_size: int

    def to_json(self) -> dict:
        return {
            "origin": [float(v) for v in self.origin],
            "voxel_size": self.voxel_size,
            "source_size": self.source_size,
            "rep_index": self.rep_index.tolist(),
            "voxel_of": self.voxel_of.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict, low_cloud: Optional[PointCloud] = None) -> "SubsampleResult":
        """Rebuild from :meth:`to_json` output. Without ``low_cloud`` only the
        grid correspondence is usable (enough for voxel projection)."""
        try:
            rep = np.asarray(doc["rep_index"], dtype=np.int64)
            keys = np.asarray(doc["voxel_of"], dtype=np.int64).reshape(-1, 3)
        except KeyError as exc:
            raise ValueError(f"subsample map lacks field {exc.args[0]!r}") from None
        if len(rep) != len(keys) or (low_cloud is not None and len(rep) != len(low_cloud)):
            raise ValueError("subsample map does not match the low resolution cloud")
        if low_cloud is None:
            low_cloud = PointCloud(np.empty((0, 3)))
        return cls(low_cloud, rep, keys, np.asarray(doc["origin"], dtype=np.float64),
                   float(doc["voxel_size"]), int(doc["source_size"]))


def majority_labels(labels: np.ndarray, groups: np.ndarray, n_groups: int) -> np.ndarray:
    """Most frequent label per group, lowest id on ties; UNLABELED points do not vote."""
    out = np.full(n_groups, UNLABELED, dtype=np.int64)
    known = labels != UNLABELED
    if not known.any():
        return out
    lab, grp = labels[known], groups[known]
    n_cls = int(lab.max()) + 1
    counts = np.zeros((n_groups, n_cls), dtype=np.int64)
    np.add.at(counts, (grp, lab), 1)
    voted = counts.sum(axis=1) > 0
    out[voted] = counts[voted].argmax(axis=1)
    return out


def representatives(positions: np.ndarray, grid: VoxelGrid) -> np.ndarray:
    """Per voxel, the point nearest the voxel's centroid (lowest index on ties)."""
    inv = grid.point_voxel
    counts = grid.counts.astype(np.float64)
    centroid = np.stack(
        [np.bincount(inv, weights=positions[:, a], minlength=len(grid)) for a in range(3)],
        axis=1,
    ) / counts[:, None]
    d2 = ((positions - centroid[inv]) ** 2).sum(axis=1)
    idx = np.arange(len(positions))
    order = np.lexsort((idx, d2, inv))
    first = np.ones(len(order), dtype=bool)
    first[1:] = inv[order[1:]] != inv[order[:-1]]
    return order[first]


def voxel_subsample(
    cloud: PointCloud,
    voxel_size: float,
    origin: Optional[np.ndarray] = None,
    grid: Optional[VoxelGrid] = None,
) -> SubsampleResult:
    """Keep one original point per occupied voxel.

    Colors are the per-voxel mean (rounded half up), labels the per-voxel
    majority. Intensity follows the representative point.
    """
    if grid is None:
        grid = build_voxel_grid(cloud, voxel_size, origin)
    rep = representatives(cloud.positions, grid)
    colors = None
    if cloud.colors is not None:
        sums = np.stack(
            [np.bincount(grid.point_voxel, weights=cloud.colors[:, c].astype(np.float64),
                         minlength=len(grid)) for c in range(3)],
            axis=1,
        )
        colors = np.floor(sums / grid.counts[:, None] + 0.5).astype(np.uint8)
    labels = None
    if cloud.labels is not None:
        labels = majority_labels(cloud.labels, grid.point_voxel, len(grid))
    intensity = None if cloud.intensity is None else cloud.intensity[rep]
    low = PointCloud(cloud.positions[rep], colors=colors, labels=labels, intensity=intensity)
    return SubsampleResult(low, rep, grid.keys, grid.origin, grid.voxel_size, len(cloud))
