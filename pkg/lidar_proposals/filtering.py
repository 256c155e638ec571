"""Proposal filtering: size limits, occlusion labelling and a distance-dependent minimum point count."""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from lidar_proposals.core import Box3D, Cluster, ObjectClass, PointCloud, compute_aabb
from lidar_proposals.errors import ConfigError, FitError, FormatError
from lidar_proposals.ingest import GroundTruthObject

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class MinPointsCurve:
    """n_min(d) = a * exp(-k * d), d being the distance along x."""

    a: float
    k: float

    def __post_init__(self) -> None:
        if self.a <= 0 or self.k <= 0:
            raise ConfigError(f"curve parameters must be positive, got a={self.a}, k={self.k}")

    def n_min(self, distance: float | np.ndarray) -> float | np.ndarray:
        return self.a * np.exp(-self.k * np.asarray(distance, dtype=np.float64))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(f"{self.a!r} {self.k!r}\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> MinPointsCurve:
        parts = Path(path).read_text(encoding="utf-8").split()
        if len(parts) != 2:
            raise FormatError(f"{path}: expected two numbers, got {len(parts)} fields")
        try:
            return cls(float(parts[0]), float(parts[1]))
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class FilterParams:
    max_length: float = 8.0
    max_width: float = 4.0
    min_height: float = 0.25
    theta_t: float = math.radians(0.5)
    curve: MinPointsCurve | None = None

    def __post_init__(self) -> None:
        if min(self.max_length, self.max_width, self.min_height, self.theta_t) <= 0:
            raise ConfigError("filter limits must be positive")


@dataclass(frozen=True)
class Proposal:
    """A cluster with its box, bearing span about the sensor and mean range.

    `span_right` may exceed pi when the span crosses the rear axis; `span_left` is in (-pi, pi].
    """

    cluster: Cluster
    box: Box3D
    range: float
    span_left: float
    span_right: float
    occluded: bool = False

    @property
    def point_count(self) -> int:
        return len(self.cluster)

    @property
    def distance(self) -> float:
        return self.box.center.x


def angular_span(xyz: np.ndarray) -> tuple[float, float]:
    """Smallest bearing interval covering the points: the complement of the widest gap."""
    bearings = np.sort(np.arctan2(xyz[:, 1], xyz[:, 0]))
    if len(bearings) == 1:
        return float(bearings[0]), float(bearings[0])
    gaps = np.diff(bearings)
    wrap_gap = bearings[0] + TWO_PI - bearings[-1]
    widest = int(np.argmax(gaps))
    if wrap_gap >= gaps[widest]:
        return float(bearings[0]), float(bearings[-1])
    return float(bearings[widest + 1]), float(bearings[widest] + TWO_PI)


def make_proposals(cloud: PointCloud, clusters: Sequence[Cluster]) -> list[Proposal]:
    proposals = []
    for cluster in clusters:
        xyz = cloud.xyz[cluster.indices]
        left, right = angular_span(xyz)
        proposals.append(
            Proposal(
                cluster=cluster,
                box=compute_aabb(cloud, cluster.indices),
                range=float(np.linalg.norm(xyz, axis=1).mean()),
                span_left=left,
                span_right=right,
            )
        )
    return proposals


def size_filter(proposals: Sequence[Proposal], params: FilterParams) -> list[Proposal]:
    kept = []
    for proposal in proposals:
        length, width, height = proposal.box.extent
        if length <= params.max_length and width <= params.max_width and height >= params.min_height:
            kept.append(proposal)
    return kept


def _intervals(left: float, right: float) -> list[tuple[float, float]]:
    """Split a bearing interval into pieces inside [-pi, pi]."""
    if right - left >= TWO_PI:
        return [(-math.pi, math.pi)]
    start = (left + math.pi) % TWO_PI - math.pi
    end = start + (right - left)
    if end <= math.pi:
        return [(start, end)]
    return [(start, math.pi), (-math.pi, end - TWO_PI)]


def _overlaps(a: list[tuple[float, float]], b: list[tuple[float, float]]) -> bool:
    return any(lo_a <= hi_b and lo_b <= hi_a for lo_a, hi_a in a for lo_b, hi_b in b)


def label_occlusion(proposals: Sequence[Proposal], theta_t: float) -> list[Proposal]:
    """A proposal is occluded unless it is strictly nearer than every proposal overlapping its padded span."""
    padded = [_intervals(p.span_left - theta_t, p.span_right + theta_t) for p in proposals]
    labelled = []
    for i, proposal in enumerate(proposals):
        occluded = any(
            j != i and _overlaps(padded[i], padded[j]) and not proposal.range < other.range
            for j, other in enumerate(proposals)
        )
        labelled.append(replace(proposal, occluded=occluded))
    return labelled


def min_points_filter(proposals: Sequence[Proposal], curve: MinPointsCurve) -> list[Proposal]:
    """Drop non-occluded proposals holding fewer points than the curve allows at their distance."""
    return [p for p in proposals if p.occluded or p.point_count >= curve.n_min(p.distance)]


def filter_proposals(proposals: Sequence[Proposal], params: FilterParams) -> list[Proposal]:
    """Size limits, then occlusion labels, then the minimum-points curve when one is configured."""
    sized = size_filter(proposals, params)
    labelled = label_occlusion(sized, params.theta_t)
    kept = min_points_filter(labelled, params.curve) if params.curve is not None else labelled
    logger.debug("filtering: %d -> %d (size) -> %d proposals", len(proposals), len(sized), len(kept))
    return kept


def curve_samples(cloud: PointCloud, objects: Sequence[GroundTruthObject]) -> list[tuple[float, int]]:
    """(distance along x, points inside the box) for every labelled object holding at least one point."""
    wanted = ObjectClass.objects()
    samples = []
    for obj in objects:
        if obj.cls not in wanted:
            continue
        count = int(np.count_nonzero(obj.box.contains(cloud.xyz)))
        if count:
            samples.append((obj.box.center.x, count))
    return samples


def fit_min_points_curve(
    samples: Sequence[tuple[float, int]], interval: float = 0.5, envelope: bool = False
) -> MinPointsCurve:
    """Fit a*exp(-k*d) by least squares on log counts to the per-bin minimum counts.

    Each bin contributes its minimum-count sample at that sample's own distance. With
    `envelope`, the fitted curve is lowered until no bin minimum lies below it.
    """
    if interval <= 0:
        raise ConfigError("interval must be > 0")
    if not samples:
        raise FitError("no samples to fit")
    data = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    bins = np.floor(data[:, 0] / interval).astype(np.int64)
    order = np.lexsort((data[:, 1], bins))
    _, first = np.unique(bins[order], return_index=True)
    minima = data[order][first]
    if len(minima) < 2:
        raise FitError(f"need at least 2 occupied distance bins, got {len(minima)}")
    if np.any(minima[:, 1] <= 0):
        raise FitError("per-bin minimum count must be positive")
    slope, intercept = np.polyfit(minima[:, 0], np.log(minima[:, 1]), 1)
    if slope > -1e-12:
        raise FitError("non-decreasing fit")
    if envelope:
        intercept += min(0.0, float(np.min(np.log(minima[:, 1]) - (slope * minima[:, 0] + intercept))))
    return MinPointsCurve(a=float(np.exp(intercept)), k=float(-slope))


def write_proposals_csv(path: str | Path, proposals: Sequence[Proposal], kept: Sequence[Proposal]) -> None:
    survivors = {p.cluster.as_set() for p in kept}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "x_min", "y_min", "z_min", "x_max", "y_max", "z_max", "count", "occluded", "kept"])
        occluded = {p.cluster.as_set(): p.occluded for p in kept}
        for index, p in enumerate(proposals):
            key = p.cluster.as_set()
            writer.writerow(
                [index, *(f"{v:.3f}" for v in (*p.box.lo, *p.box.hi)), p.point_count,
                 int(occluded.get(key, p.occluded)), int(key in survivors)]
            )
