"""Grouping non-ground points into candidate objects.

Two strategies: Euclidean connectivity over all points (`cluster_distance`) and a scan-line
method that splits each ring into segments and merges segments across neighbouring rings
(`cluster_scan`). `scan_oracle` builds the segment graph explicitly and is the reference the
scan-line merge is checked against.
"""

from __future__ import annotations

import csv
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from lidar_proposals.core import Cluster, PointCloud, parallel_map
from lidar_proposals.errors import ConfigError, RingsRequiredError

logger = logging.getLogger(__name__)

Backend = Literal["kdtree", "exhaustive"]


@dataclass(frozen=True)
class ClusterParams:
    t_d: float = 0.5
    h_d: float = 0.49
    v_d: float = 0.58
    mini_points: int = 1

    def __post_init__(self) -> None:
        if min(self.t_d, self.h_d, self.v_d) <= 0:
            raise ConfigError("cluster thresholds must be > 0")
        if self.mini_points < 1:
            raise ConfigError("mini_points must be >= 1")


def _components(n: int, rows: np.ndarray, cols: np.ndarray) -> list[Cluster]:
    """Connected components of an undirected graph, ordered by smallest member index."""
    if n == 0:
        return []
    graph = coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    order = np.argsort(labels, kind="stable")
    split = np.flatnonzero(np.diff(labels[order])) + 1
    groups = sorted(np.split(order, split), key=lambda g: int(g.min()))
    return [Cluster(indices=g, label=i) for i, g in enumerate(groups)]


def cluster_distance(cloud: PointCloud, t_d: float, backend: Backend = "kdtree") -> list[Cluster]:
    """Connected components of the graph joining points closer than `t_d`."""
    if t_d <= 0:
        raise ConfigError("t_d must be > 0")
    xyz = cloud.xyz
    if backend == "kdtree":
        pairs = cKDTree(xyz).query_pairs(t_d, output_type="ndarray") if len(xyz) else np.zeros((0, 2), int)
    elif backend == "exhaustive":
        pairs = _exhaustive_pairs(xyz, t_d)
    else:
        raise ConfigError(f"unknown clustering backend {backend!r}")
    if len(pairs):
        distance = np.linalg.norm(xyz[pairs[:, 0]] - xyz[pairs[:, 1]], axis=1)
        pairs = pairs[distance < t_d]
    return _components(len(xyz), pairs[:, 0], pairs[:, 1])


def _exhaustive_pairs(xyz: np.ndarray, radius: float) -> np.ndarray:
    found = []
    chunk = max(1, 4_000_000 // max(len(xyz), 1))
    for start in range(0, len(xyz), chunk):
        block = xyz[start : start + chunk]
        distance = np.linalg.norm(block[:, None, :] - xyz[None, :, :], axis=2)
        i, j = np.nonzero(distance <= radius)
        i += start
        upper = i < j
        found.append(np.column_stack([i[upper], j[upper]]))
    return np.concatenate(found) if found else np.zeros((0, 2), dtype=np.int64)


def ring_segments(cloud: PointCloud, h_d: float, threads: int = 1) -> dict[int, list[np.ndarray]]:
    """Split every ring into runs of consecutive points closer than `h_d`.

    The last and first points of a ring are gap-tested too, so a run crossing the start of the
    sweep stays whole.
    """
    if not cloud.has_rings:
        raise RingsRequiredError()
    order = np.argsort(cloud.ring, kind="stable")
    rings, starts = np.unique(cloud.ring[order], return_index=True)
    bounds = dict(zip(rings.tolist(), zip(starts.tolist(), [*starts[1:].tolist(), len(order)])))

    def split(ring: int) -> list[np.ndarray]:
        lo, hi = bounds[ring]
        members = order[lo:hi]
        pts = cloud.xyz[members]
        gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1) >= h_d
        segments = np.split(members, np.flatnonzero(gaps) + 1)
        if len(segments) > 1 and np.linalg.norm(pts[-1] - pts[0]) < h_d:
            segments[0] = np.concatenate([segments.pop(), segments[0]])
        return segments

    return dict(zip(rings.tolist(), parallel_map(split, rings.tolist(), threads)))


def cluster_scan(cloud: PointCloud, params: ClusterParams, threads: int = 1) -> list[Cluster]:
    """Scan-line clustering, top ring first.

    Each segment is labelled from the segments it touches in the ring above. When it touches
    several, they all collapse to the smallest label; the collapse is recorded in a label map
    so segments labelled earlier resolve to the same root.
    """
    segments = ring_segments(cloud, params.h_d, threads)
    if not segments:
        return []
    merged: dict[int, int] = {}

    def resolve(label: int) -> int:
        root = label
        while merged.get(root, root) != root:
            root = merged[root]
        while label != root:
            merged[label], label = root, merged[label]
        return root

    next_label = 0
    above_ring: int | None = None
    above: list[tuple[np.ndarray, int]] = []
    labelled: list[tuple[np.ndarray, int]] = []

    for ring in sorted(segments):
        current = []
        links = (
            _segment_links(cloud, [s for s, _ in above], segments[ring], params)
            if above_ring is not None and above_ring == ring - 1
            else {}
        )
        for index, segment in enumerate(segments[ring]):
            touching = {resolve(above[j][1]) for j in links.get(index, ())}
            if touching:
                label = min(touching)
                for other in touching:
                    merged[other] = label
            else:
                label = next_label
                merged[label] = label
                next_label += 1
            current.append((segment, label))
        labelled.extend(current)
        above, above_ring = current, ring

    groups: dict[int, list[np.ndarray]] = {}
    for segment, label in labelled:
        groups.setdefault(resolve(label), []).append(segment)
    clusters = sorted((np.concatenate(parts) for parts in groups.values()), key=lambda g: int(g.min()))
    logger.debug("scan clustering: %d segments, %d clusters", len(labelled), len(clusters))
    return [Cluster(indices=g, label=i) for i, g in enumerate(clusters)]


def _segment_links(
    cloud: PointCloud,
    upper: Sequence[np.ndarray],
    lower: Sequence[np.ndarray],
    params: ClusterParams,
) -> dict[int, list[int]]:
    """For each lower segment, the upper segments it connects to."""
    if not upper or not lower:
        return {}
    upper_idx = np.concatenate(upper)
    upper_seg = np.repeat(np.arange(len(upper)), [len(s) for s in upper])
    lower_idx = np.concatenate(lower)
    lower_seg = np.repeat(np.arange(len(lower)), [len(s) for s in lower])

    near = cKDTree(cloud.xyz[lower_idx]).sparse_distance_matrix(
        cKDTree(cloud.xyz[upper_idx]), params.v_d, output_type="ndarray"
    )
    near = near[near["v"] < params.v_d]
    if len(near) == 0:
        return {}
    n_upper = len(upper)
    # one vote per (lower point, upper segment)
    votes = np.unique(near["i"].astype(np.int64) * n_upper + upper_seg[near["j"]])
    point, up = np.divmod(votes, n_upper)
    keys, counts = np.unique(lower_seg[point] * n_upper + up, return_counts=True)
    links: dict[int, list[int]] = {}
    for key in keys[counts >= params.mini_points].tolist():
        low, up_seg = divmod(key, n_upper)
        links.setdefault(low, []).append(up_seg)
    return links


def scan_oracle(cloud: PointCloud, params: ClusterParams) -> list[Cluster]:
    """Connected components of the explicit segment graph, by brute-force distances."""
    segments = ring_segments(cloud, params.h_d)
    nodes: list[np.ndarray] = []
    ring_of: list[int] = []
    for ring in sorted(segments):
        nodes.extend(segments[ring])
        ring_of.extend([ring] * len(segments[ring]))
    if not nodes:
        return []

    rows, cols = [], []
    for a, seg_a in enumerate(nodes):
        for b, seg_b in enumerate(nodes):
            if ring_of[b] != ring_of[a] - 1:
                continue
            distance = np.linalg.norm(cloud.xyz[seg_a][:, None, :] - cloud.xyz[seg_b][None, :, :], axis=2)
            if np.count_nonzero((distance < params.v_d).any(axis=1)) >= params.mini_points:
                rows.append(a)
                cols.append(b)

    node_clusters = _components(len(nodes), np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64))
    groups = sorted(
        (np.concatenate([nodes[i] for i in c.indices]) for c in node_clusters), key=lambda g: int(g.min())
    )
    return [Cluster(indices=g, label=i) for i, g in enumerate(groups)]


def write_cluster_csv(path: str | Path, clusters: Sequence[Cluster]) -> None:
    rows = sorted((int(i), c.label) for c in clusters for i in c.indices)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["point_index", "cluster_id"])
        writer.writerows(rows)
