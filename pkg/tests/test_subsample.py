import itertools

import numpy as np
import pytest

from mrseg.cloud import UNLABELED, PointCloud
from mrseg.subsample import majority_labels, voxel_subsample

CORNERS = np.array(list(itertools.product([0.0, 1.0], repeat=3)))


def brute_subsample(pos, colors, labels, size, origin=None):
    """Per-bucket scan: representative nearest to centroid, majority vote, rounded mean color."""
    origin = pos.min(axis=0) if origin is None else origin
    buckets: dict = {}
    for i, p in enumerate(pos):
        key = tuple(int(np.floor((p[a] - origin[a]) / size)) for a in range(3))
        buckets.setdefault(key, []).append(i)
    out = {}
    for key, members in buckets.items():
        members = np.array(members)
        centroid = pos[members].mean(axis=0)
        best, best_d = None, None
        for i in members:
            d = float(((pos[i] - centroid) ** 2).sum())
            if best is None or d < best_d:
                best, best_d = i, d
        label = None
        if labels is not None:
            votes: dict = {}
            for lab in labels[members]:
                if lab != UNLABELED:
                    votes[int(lab)] = votes.get(int(lab), 0) + 1
            label = UNLABELED if not votes else min(votes, key=lambda c: (-votes[c], c))
        color = None
        if colors is not None:
            color = tuple(int(np.floor(colors[members, c].astype(float).mean() + 0.5)) for c in range(3))
        out[key] = (int(best), label, color)
    return out


def test_cube_corners():
    res = voxel_subsample(PointCloud(CORNERS), 2.0)
    assert len(res.low_cloud) == 1
    assert res.rep_index.tolist() == [0]  # all equidistant from the centroid


def test_majority_and_tie_rule():
    groups = np.array([0, 0, 0, 1, 1])
    labels = np.array([1, 1, 2, 2, 1])
    assert majority_labels(labels, groups, 2).tolist() == [1, 1]


def test_unlabeled_points_do_not_vote():
    groups = np.array([0, 0, 0, 1])
    labels = np.array([UNLABELED, UNLABELED, 3, UNLABELED])
    assert majority_labels(labels, groups, 2).tolist() == [3, UNLABELED]


def test_matches_brute_force(rng):
    pos = rng.uniform(0, 5, size=(20_000, 3))
    colors = rng.integers(0, 256, size=(20_000, 3))
    labels = rng.integers(-1, 5, size=20_000)
    res = voxel_subsample(PointCloud(pos, colors=colors, labels=labels), 0.5)
    expected = brute_subsample(pos, colors, labels, 0.5)
    assert len(res.low_cloud) == len(expected)
    for j, key in enumerate(map(tuple, res.voxel_of.tolist())):
        rep, lab, col = expected[key]
        assert res.rep_index[j] == rep
        assert res.low_cloud.labels[j] == lab
        assert tuple(res.low_cloud.colors[j].tolist()) == col


def test_invariants(rng):
    pos = rng.normal(size=(3000, 3))
    res = voxel_subsample(PointCloud(pos), 0.3)
    assert len(res.low_cloud) <= len(pos)
    assert len(set(res.rep_index.tolist())) == len(res.rep_index)
    assert len({tuple(k) for k in res.voxel_of.tolist()}) == len(res.voxel_of)
    lo = res.origin + res.voxel_of * res.voxel_size
    rep = res.low_cloud.positions
    assert np.all(rep >= lo) and np.all(rep < lo + res.voxel_size)


def test_equal_count_when_each_voxel_holds_one_point():
    pos = np.array([[0.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0]])
    res = voxel_subsample(PointCloud(pos), 0.5)
    assert len(res.low_cloud) == 3


def test_idempotent_at_fixed_grid(rng):
    cloud = PointCloud(rng.uniform(0, 2, size=(5000, 3)),
                       colors=rng.integers(0, 256, size=(5000, 3)),
                       labels=rng.integers(0, 4, 5000))
    first = voxel_subsample(cloud, 0.25)
    again = voxel_subsample(first.low_cloud, 0.25, origin=first.origin)
    assert again.low_cloud == first.low_cloud
    assert np.array_equal(again.voxel_of, first.voxel_of)


def test_errors():
    with pytest.raises(ValueError):
        voxel_subsample(PointCloud(np.empty((0, 3))), 0.1)
    with pytest.raises(ValueError):
        voxel_subsample(PointCloud(CORNERS), -1.0)


def test_density_reduction():
    """1M pts/m^2 down to the voxel that leaves one point per 5e-6 m^2 cell."""
    rng = np.random.default_rng(7)
    side = 0.3
    n = int(1_000_000 * side * side)
    pos = np.column_stack([rng.uniform(0, side, n), rng.uniform(0, side, n), np.zeros(n)])
    voxel = np.sqrt(1.0 / 200_000)
    res = voxel_subsample(PointCloud(pos), voxel)
    density = len(res.low_cloud) / (side * side)
    assert density == pytest.approx(200_000, rel=0.2)
