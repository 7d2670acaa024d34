"""Label transfer between resolutions."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .cloud import UNLABELED, MergedSchema, PointCloud
from .spatial import NeighborIndex, lookup_keys, voxel_keys
from .subsample import SubsampleResult


class ProjectionError(ValueError):
    pass


def voxel_project(
    low_labels: np.ndarray, sub: SubsampleResult, full_cloud: PointCloud
) -> np.ndarray:
    """Give every full-resolution point the label of its voxel's low-resolution point."""
    low_labels = np.asarray(low_labels, dtype=np.int64)
    if len(low_labels) != len(sub.rep_index):
        raise ProjectionError(
            f"{len(low_labels)} labels for {len(sub.rep_index)} low resolution points")
    if len(full_cloud) != sub.source_size:
        raise ProjectionError(
            f"full cloud has {len(full_cloud)} points, subsample was built from {sub.source_size}")
    keys = voxel_keys(full_cloud.positions, sub.origin, sub.voxel_size)
    slot = lookup_keys(sub.voxel_of, keys)
    if np.any(slot < 0):
        raise ProjectionError(
            f"{int(np.sum(slot < 0))} points fall in voxels absent from the subsample; "
            "grid parameters do not match")
    return low_labels[slot]


def closest_point_project(
    partial: PointCloud, targets: PointCloud | np.ndarray, workers: int = 1
) -> np.ndarray:
    """Label each target with its nearest labeled point (lowest index on ties)."""
    if len(partial) == 0:
        raise ProjectionError("cannot project from an empty cloud")
    if partial.labels is None:
        raise ProjectionError("source cloud carries no labels")
    pos = targets.positions if isinstance(targets, PointCloud) else np.asarray(targets)
    if len(pos) == 0:
        return np.empty(0, dtype=np.int64)
    nearest = NeighborIndex(partial.positions, workers=workers).nearest_batch(pos)
    return partial.labels[nearest]


def compose_final(
    initial_full: np.ndarray,
    stage2: Mapping[int, np.ndarray],
    merged: MergedSchema,
) -> tuple[np.ndarray, int]:
    """Combine the merged-schema labeling with second-stage results.

    ``stage2[m]`` holds original-schema labels for the points whose initial
    label is concatenated class ``m``, in ascending point order. Entries equal
    to ``UNLABELED`` fall back to the class's base Low class. Returns the final
    labels and the number of such fallbacks.
    """
    initial_full = np.asarray(initial_full, dtype=np.int64)
    if initial_full.size and (initial_full.min() < 0 or initial_full.max() >= len(merged)):
        raise ProjectionError("initial labels outside the merged schema")
    final = merged.backward()[initial_full]
    fallbacks = 0
    extra = set(stage2) - set(merged.concatenated_ids)
    if extra:
        raise ProjectionError(f"second-stage labels for non-concatenated classes {sorted(extra)}")
    for m in merged.concatenated_ids:
        where = np.flatnonzero(initial_full == m)
        if m not in stage2:
            if len(where):
                raise ProjectionError(f"no second-stage labels for {merged.names[m]!r}")
            continue
        labels = np.asarray(stage2[m], dtype=np.int64)
        if len(labels) != len(where):
            raise ProjectionError(
                f"class {merged.names[m]!r}: {len(labels)} second-stage labels "
                f"for {len(where)} points")
        missing = labels == UNLABELED
        allowed = np.asarray(sorted(merged.members[m]))
        bad = ~missing & ~np.isin(labels, allowed)
        if bad.any():
            raise ProjectionError(
                f"second-stage label {int(labels[bad][0])} is not a member of {merged.names[m]!r}")
        final[where] = np.where(missing, merged.base[m], labels)
        fallbacks += int(missing.sum())
    return final, fallbacks
