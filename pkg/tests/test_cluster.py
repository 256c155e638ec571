from __future__ import annotations

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidar_proposals.cluster import (
    ClusterParams,
    cluster_distance,
    cluster_scan,
    ring_segments,
    scan_oracle,
    write_cluster_csv,
)
from lidar_proposals.core import PointCloud, partition_key
from lidar_proposals.errors import ConfigError, RingsRequiredError
from lidar_proposals.ground import GroundGridConfig, build_ground_grid, postprocess_grid, remove_ground

BACKENDS = ("kdtree", "exhaustive")

# quarter-metre lattice: squared distances are exact, none within rounding of the thresholds
lattice = st.integers(min_value=0, max_value=12).map(lambda k: k * 0.25)
lattice_points = st.lists(st.tuples(lattice, lattice, lattice), min_size=1, max_size=40, unique=True)


def _blobs(rng: np.random.Generator) -> np.ndarray:
    return np.vstack([rng.normal((0, 0, 0), 0.1, (50, 3)), rng.normal((10, 0, 0), 0.1, (50, 3))])


def _assert_partition(clusters, n):
    members = np.concatenate([c.indices for c in clusters]) if clusters else np.zeros(0, int)
    assert sorted(members.tolist()) == list(range(n))


@pytest.mark.parametrize("backend", BACKENDS)
def test_separated_blobs(backend):
    xyz = _blobs(np.random.default_rng(0))
    clusters = cluster_distance(PointCloud(xyz), 0.5, backend)
    assert partition_key(clusters) == frozenset({frozenset(range(50)), frozenset(range(50, 100))})
    assert [c.label for c in clusters] == [0, 1]


@pytest.mark.parametrize("backend", BACKENDS)
def test_chain_links_transitively(backend):
    xyz = np.column_stack([np.arange(10) * 0.4, np.zeros(10), np.zeros(10)])
    assert len(cluster_distance(PointCloud(xyz), 0.5, backend)) == 1


@pytest.mark.parametrize("backend", BACKENDS)
def test_threshold_is_strict(backend):
    xyz = np.array([[0.0, 0.0, 0.0], [0.5, 0.0, 0.0]])
    assert len(cluster_distance(PointCloud(xyz), 0.5, backend)) == 2


def test_distance_clustering_validation():
    cloud = PointCloud(np.zeros((1, 3)))
    with pytest.raises(ConfigError):
        cluster_distance(cloud, 0.0)
    with pytest.raises(ConfigError):
        cluster_distance(cloud, 0.5, "octree")
    assert cluster_distance(PointCloud.empty(), 0.5) == []


@settings(max_examples=60, deadline=None)
@given(lattice_points)
def test_kdtree_matches_exhaustive(points):
    cloud = PointCloud(np.array(points))
    kd = cluster_distance(cloud, 0.6, "kdtree")
    brute = cluster_distance(cloud, 0.6, "exhaustive")
    assert partition_key(kd) == partition_key(brute)
    _assert_partition(kd, len(points))


def test_scan_needs_rings():
    cloud = PointCloud(np.zeros((3, 3)))
    with pytest.raises(RingsRequiredError):
        ring_segments(cloud, 0.49)
    with pytest.raises(RingsRequiredError):
        cluster_scan(cloud, ClusterParams())


def test_ring_segments_split_on_gaps():
    xyz = np.array([[0.0, 0, 0], [0.1, 0, 0], [1.0, 0, 0], [1.1, 0, 0], [0.0, 5.0, 0]])
    cloud = PointCloud(xyz, ring=np.array([0, 0, 0, 0, 1]))
    segments = ring_segments(cloud, 0.49)
    assert [s.tolist() for s in segments[0]] == [[0, 1], [2, 3]]
    assert [s.tolist() for s in segments[1]] == [[4]]


def test_ring_segments_wrap_around():
    xyz = np.array([[0.0, 0, 0], [0.1, 0, 0], [5.0, 0, 0], [5.1, 0, 0], [-0.1, 0, 0]])
    segments = ring_segments(PointCloud(xyz, ring=np.zeros(5, dtype=int)), 0.49)
    assert [s.tolist() for s in segments[0]] == [[4, 0, 1], [2, 3]]


def test_scan_merges_through_lower_ring():
    # two separate segments in ring 0 bridged by one long segment in ring 1
    xyz = np.array(
        [
            [0.0, 0.0, 1.0],
            [3.0, 0.0, 1.0],
            [0.0, 0.0, 0.7],
            [0.4, 0.0, 0.7],
            [0.8, 0.0, 0.7],
            [1.2, 0.0, 0.7],
            [1.6, 0.0, 0.7],
            [2.0, 0.0, 0.7],
            [2.4, 0.0, 0.7],
            [2.8, 0.0, 0.7],
        ]
    )
    ring = np.array([0, 0, 1, 1, 1, 1, 1, 1, 1, 1])
    clusters = cluster_scan(PointCloud(xyz, ring=ring), ClusterParams())
    assert len(clusters) == 1
    assert clusters[0].as_set() == frozenset(range(10))


def test_scan_skips_missing_ring():
    xyz = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.8]])
    clusters = cluster_scan(PointCloud(xyz, ring=np.array([0, 2])), ClusterParams())
    assert len(clusters) == 2


def test_mini_points_needs_enough_votes():
    xyz = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.7], [0.3, 0.0, 0.7]])
    ring = np.array([0, 1, 1])
    assert len(cluster_scan(PointCloud(xyz, ring=ring), ClusterParams(mini_points=2))) == 1
    assert len(cluster_scan(PointCloud(xyz, ring=ring), ClusterParams(mini_points=3))) == 2


def test_car_is_one_cluster(car_scene):
    car = car_scene.cloud.subset(np.flatnonzero(car_scene.object_mask))
    assert len(cluster_scan(car, ClusterParams())) == 1
    assert len(cluster_distance(car, 0.5)) == 1


def test_scan_matches_oracle_on_scene(street_scene):
    grid = postprocess_grid(build_ground_grid(street_scene.cloud, GroundGridConfig()))
    cloud, _ = remove_ground(street_scene.cloud, grid, 0.26)
    params = ClusterParams()
    fast = cluster_scan(cloud, params, threads=1)
    assert partition_key(fast) == partition_key(scan_oracle(cloud, params))
    assert partition_key(fast) == partition_key(cluster_scan(cloud, params, threads=4))
    _assert_partition(fast, len(cloud))


@settings(max_examples=60, deadline=None)
@given(
    lattice_points,
    st.data(),
    st.integers(min_value=1, max_value=3),
)
def test_scan_matches_oracle(points, data, mini_points):
    ring = data.draw(st.lists(st.integers(0, 3), min_size=len(points), max_size=len(points)))
    cloud = PointCloud(np.array(points), ring=np.array(ring))
    params = ClusterParams(h_d=0.6, v_d=0.6, mini_points=mini_points)
    fast = cluster_scan(cloud, params)
    assert partition_key(fast) == partition_key(scan_oracle(cloud, params))
    _assert_partition(fast, len(points))


def test_cluster_csv(tmp_path):
    xyz = _blobs(np.random.default_rng(1))
    clusters = cluster_distance(PointCloud(xyz), 0.5)
    write_cluster_csv(tmp_path / "clusters.csv", clusters)
    with (tmp_path / "clusters.csv").open(newline="") as fh:
        table = list(csv.reader(fh))
    assert table[0] == ["point_index", "cluster_id"]
    assert table[1] == ["0", "0"]
    assert table[-1] == ["99", "1"]


class _UnionFind:
    def __init__(self, n: int) -> None:
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _union_find_scan(xyz: np.ndarray, ring: np.ndarray, params: ClusterParams) -> frozenset:
    """Point-level union-find: ring neighbours closer than h_d, then segment links between adjacent rings."""
    n = len(xyz)
    points = _UnionFind(n)
    members = {r: np.flatnonzero(ring == r) for r in np.unique(ring).tolist()}
    for idx in members.values():
        for a, b in zip(idx[:-1], idx[1:]):
            if np.linalg.norm(xyz[a] - xyz[b]) < params.h_d:
                points.union(int(a), int(b))
        if len(idx) > 1 and np.linalg.norm(xyz[idx[-1]] - xyz[idx[0]]) < params.h_d:
            points.union(int(idx[-1]), int(idx[0]))
    segment_of = np.array([points.find(i) for i in range(n)])

    merged = _UnionFind(n)
    for r, lower in members.items():
        upper = members.get(r - 1)
        if upper is None:
            continue
        near = np.linalg.norm(xyz[lower][:, None, :] - xyz[upper][None, :, :], axis=2) < params.v_d
        votes: dict[tuple[int, int], int] = {}
        for li, a in enumerate(lower):
            for b_seg in {int(segment_of[upper[k]]) for k in np.flatnonzero(near[li])}:
                key = (int(segment_of[a]), b_seg)
                votes[key] = votes.get(key, 0) + 1
        for (a_seg, b_seg), count in votes.items():
            if count >= params.mini_points:
                merged.union(a_seg, b_seg)

    groups: dict[int, set[int]] = {}
    for i in range(n):
        groups.setdefault(merged.find(int(segment_of[i])), set()).add(i)
    return frozenset(frozenset(g) for g in groups.values())


def _union_find_distance(xyz: np.ndarray, t_d: float) -> frozenset:
    found = _UnionFind(len(xyz))
    distance = np.linalg.norm(xyz[:, None, :] - xyz[None, :, :], axis=2)
    for a, b in zip(*np.nonzero(np.triu(distance < t_d, k=1))):
        found.union(int(a), int(b))
    groups: dict[int, set[int]] = {}
    for i in range(len(xyz)):
        groups.setdefault(found.find(i), set()).add(i)
    return frozenset(frozenset(g) for g in groups.values())


@pytest.mark.parametrize("batch", range(4))
def test_clustering_matches_union_find_on_random_clouds(batch):
    rng = np.random.default_rng(100 + batch)
    for _ in range(30):
        n = int(rng.integers(1, 501))
        side = rng.uniform(4.0, 15.0)
        xyz = rng.uniform(0.0, side, (n, 3))
        ring = rng.integers(0, int(rng.integers(1, 9)), n)
        params = ClusterParams(
            t_d=rng.uniform(0.3, 1.2),
            h_d=rng.uniform(0.3, 1.2),
            v_d=rng.uniform(0.3, 1.2),
            mini_points=int(rng.integers(1, 4)),
        )
        clusters = cluster_scan(PointCloud(xyz, ring=ring), params)
        assert partition_key(clusters) == _union_find_scan(xyz, ring, params)
        _assert_partition(clusters, n)
        assert partition_key(cluster_distance(PointCloud(xyz), params.t_d)) == _union_find_distance(xyz, params.t_d)
