from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lidar_proposals.core import (
    Box3D,
    Cluster,
    ObjectClass,
    Point3,
    PointCloud,
    compute_aabb,
    parallel_map,
    partition_key,
    sample_points,
)
from lidar_proposals.errors import ConfigError, EmptyInputError

coords = st.floats(min_value=-100.0, max_value=100.0, allow_nan=False, allow_infinity=False)


def test_point_cloud_rejects_non_finite():
    with pytest.raises(ConfigError):
        PointCloud(np.array([[0.0, 0.0, np.nan]]))


def test_point_cloud_checks_ring_length():
    with pytest.raises(ConfigError):
        PointCloud(np.zeros((3, 3)), ring=np.zeros(2))


def test_point_cloud_arrays_are_read_only():
    cloud = PointCloud(np.zeros((2, 3)), ring=np.array([0, 1]))
    assert not cloud.xyz.flags.writeable
    assert not cloud.ring.flags.writeable


def test_subset_keeps_order_and_rings():
    cloud = PointCloud(np.arange(12.0).reshape(4, 3), ring=np.array([0, 1, 2, 3]))
    picked = cloud.subset(np.array([3, 1]))
    assert picked.xyz.tolist() == [[9.0, 10.0, 11.0], [3.0, 4.0, 5.0]]
    assert picked.ring.tolist() == [3, 1]


def test_box_rejects_inverted_corners():
    with pytest.raises(ConfigError):
        Box3D(Point3(1, 0, 0), Point3(0, 1, 1))


def test_compute_aabb_example():
    cloud = PointCloud(np.array([[0.0, 0.0, 0.0], [2.0, -1.0, 1.5], [1.0, 3.0, 0.5]]))
    box = compute_aabb(cloud, [0, 1, 2])
    assert box.lo == Point3(0.0, -1.0, 0.0)
    assert box.hi == Point3(2.0, 3.0, 1.5)
    assert box.volume == pytest.approx(2.0 * 4.0 * 1.5)


def test_compute_aabb_errors():
    cloud = PointCloud(np.zeros((2, 3)))
    with pytest.raises(EmptyInputError, match="empty cluster"):
        compute_aabb(cloud, [])
    with pytest.raises(IndexError):
        compute_aabb(cloud, [5])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.just(3)), elements=coords))
def test_aabb_contains_its_points(xyz):
    cloud = PointCloud(xyz)
    box = compute_aabb(cloud, np.arange(len(xyz)))
    assert box.contains(xyz).all()
    assert all(a <= b for a, b in zip(box.lo, box.hi))


def test_sample_points_without_replacement_when_enough():
    points = np.arange(30.0).reshape(10, 3)
    drawn = sample_points(points, 6, seed=1)
    assert drawn.shape == (6, 3)
    assert len({tuple(row) for row in drawn}) == 6


def test_sample_points_with_replacement_when_short():
    points = np.arange(9.0).reshape(3, 3)
    drawn = sample_points(points, 10, seed=1)
    assert drawn.shape == (10, 3)
    assert {tuple(row) for row in drawn} <= {tuple(row) for row in points}


def test_sample_points_is_seeded():
    points = np.random.default_rng(0).normal(size=(50, 3))
    assert np.array_equal(sample_points(points, 20, 7), sample_points(points, 20, 7))


def test_sample_points_errors():
    with pytest.raises(EmptyInputError):
        sample_points(np.zeros((0, 3)), 4, seed=0)
    with pytest.raises(ConfigError):
        sample_points(np.zeros((3, 3)), 0, seed=0)


def test_object_class_parse():
    assert ObjectClass.parse("Car") is ObjectClass.CAR
    assert ObjectClass.parse("Cyclist") is ObjectClass.CYCLIST
    assert ObjectClass.parse("Truck") is ObjectClass.BACKGROUND
    assert ObjectClass.parse("Person_sitting") is ObjectClass.BACKGROUND


def test_cluster_rejects_duplicates():
    with pytest.raises(ConfigError):
        Cluster(np.array([1, 1, 2]))


def test_partition_key_ignores_labels_and_order():
    a = [Cluster(np.array([0, 2]), 0), Cluster(np.array([1]), 1)]
    b = [Cluster(np.array([1]), 0), Cluster(np.array([2, 0]), 5)]
    assert partition_key(a) == partition_key(b)


def test_parallel_map_preserves_order():
    items = list(range(40))
    assert parallel_map(lambda x: x * x, items, threads=4) == [x * x for x in items]
