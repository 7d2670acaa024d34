import itertools

import numpy as np
import pytest

from mrseg.cloud import UNLABELED, PointCloud
from mrseg.projection import ProjectionError, closest_point_project, compose_final, voxel_project
from mrseg.subsample import SubsampleResult, voxel_subsample

from conftest import brute_knn

CORNERS = np.array(list(itertools.product([0.0, 1.0], repeat=3)))


def test_cube_corners_share_label():
    cloud = PointCloud(CORNERS)
    sub = voxel_subsample(cloud, 2.0)
    assert voxel_project(np.array([3]), sub, cloud).tolist() == [3] * 8


def test_two_voxels():
    pts = np.array([[0.0, 0, 0], [0.1, 0, 0], [1.0, 0, 0], [1.2, 0, 0]])
    cloud = PointCloud(pts)
    sub = voxel_subsample(cloud, 0.5)
    assert voxel_project(np.array([4, 9]), sub, cloud).tolist() == [4, 4, 9, 9]


def test_voxel_projection_brute_force(rng):
    pos = rng.uniform(0, 3, size=(5000, 3))
    cloud = PointCloud(pos)
    sub = voxel_subsample(cloud, 0.4)
    low = rng.integers(0, 6, len(sub.low_cloud))
    got = voxel_project(low, sub, cloud)
    for i in range(0, len(pos), 37):
        key = np.floor((pos[i] - sub.origin) / sub.voxel_size).astype(int)
        j = [t for t, k in enumerate(sub.voxel_of) if np.array_equal(k, key)]
        assert got[i] == low[j[0]]
    # representatives carry their own voxel's label
    assert np.array_equal(got[sub.rep_index], low)


def test_voxel_projection_from_serialized_map(rng):
    cloud = PointCloud(rng.uniform(0, 1, size=(500, 3)))
    sub = voxel_subsample(cloud, 0.2)
    back = SubsampleResult.from_json(sub.to_json())
    low = np.arange(len(sub.low_cloud))
    assert np.array_equal(voxel_project(low, back, cloud), voxel_project(low, sub, cloud))


def test_voxel_projection_errors(rng):
    cloud = PointCloud(rng.uniform(0, 1, size=(200, 3)))
    sub = voxel_subsample(cloud, 0.3)
    with pytest.raises(ProjectionError):
        voxel_project(np.zeros(len(sub.rep_index) + 1, int), sub, cloud)
    with pytest.raises(ProjectionError):
        voxel_project(np.zeros(len(sub.rep_index), int), sub, cloud.subset(np.arange(100)))
    shifted = PointCloud(cloud.positions + 10.0)
    with pytest.raises(ProjectionError, match="grid"):
        voxel_project(np.zeros(len(sub.rep_index), int), sub, shifted)


def test_closest_point_brute_force(rng):
    src = rng.uniform(0, 1, size=(300, 3))
    labels = rng.integers(0, 5, 300)
    targets = rng.uniform(0, 1, size=(300, 3))
    got = closest_point_project(PointCloud(src, labels=labels), targets)
    expected = [labels[brute_knn(src, t, 1)[0]] for t in targets]
    assert got.tolist() == expected


def test_closest_point_identity_and_errors(rng):
    src = PointCloud(rng.normal(size=(50, 3)), labels=rng.integers(0, 3, 50))
    assert np.array_equal(closest_point_project(src, src), src.labels)
    with pytest.raises(ProjectionError):
        closest_point_project(PointCloud(np.zeros((2, 3))), src)
    assert closest_point_project(src, np.empty((0, 3))).size == 0


def test_compose_door_and_wall(wall_schema):
    _, _, merged = wall_schema
    final, fallbacks = compose_final(np.array([0, 1, 1]), {1: np.array([2, 1])}, merged)
    assert final.tolist() == [0, 2, 1]  # ground, door, wall
    assert fallbacks == 0


def test_compose_fallback(wall_schema):
    _, _, merged = wall_schema
    final, fallbacks = compose_final(np.array([1, 0, 1]), {1: np.array([UNLABELED, 3])}, merged)
    assert final.tolist() == [1, 0, 3]
    assert fallbacks == 1


def test_compose_without_stage2_points(wall_schema):
    _, _, merged = wall_schema
    final, _ = compose_final(np.array([0, 0]), {}, merged)
    assert final.tolist() == [0, 0]


@pytest.mark.parametrize("initial, stage2", [
    ([0, 1, 1], {1: np.array([0, 1])}),  # ground is not a member of wall'
    ([0, 1, 1], {1: np.array([2])}),  # length mismatch
    ([0, 1, 1], {}),  # missing second stage
    ([0, 1], {1: np.array([1]), 0: np.array([0])}),  # non-concatenated key
    ([0, 5], {}),
])
def test_compose_errors(wall_schema, initial, stage2):
    with pytest.raises(ProjectionError):
        compose_final(np.array(initial), stage2, wall_schema[2])
