"""Shared geometric value types and primitive point-set operations.

Sensor frame follows the KITTI Velodyne convention: x forward, y left, z up, meters.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum
from typing import NamedTuple, TypeVar

import numpy as np

from lidar_proposals.errors import ConfigError, EmptyInputError

T = TypeVar("T")
R = TypeVar("R")


class ObjectClass(IntEnum):
    """Classifier label space; values are the network's output indices."""

    BACKGROUND = 0
    CAR = 1
    PEDESTRIAN = 2
    VAN = 3
    CYCLIST = 4

    @classmethod
    def objects(cls) -> tuple[ObjectClass, ...]:
        return (cls.CAR, cls.PEDESTRIAN, cls.VAN, cls.CYCLIST)

    @classmethod
    def parse(cls, name: str) -> ObjectClass:
        """Map a KITTI type string; anything outside the four object classes is background."""
        return _KITTI_TYPES.get(name.strip().lower(), cls.BACKGROUND)


_KITTI_TYPES = {
    "car": ObjectClass.CAR,
    "van": ObjectClass.VAN,
    "pedestrian": ObjectClass.PEDESTRIAN,
    "cyclist": ObjectClass.CYCLIST,
    "background": ObjectClass.BACKGROUND,
}


class Point3(NamedTuple):
    x: float
    y: float
    z: float


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered point set with optional reflectance and scan-ring index per point."""

    xyz: np.ndarray
    intensity: np.ndarray | None = None
    ring: np.ndarray | None = None

    def __post_init__(self) -> None:
        xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(xyz)):
            raise ConfigError("point coordinates must be finite")
        object.__setattr__(self, "xyz", _frozen(xyz.copy()))
        n = len(xyz)
        if self.intensity is not None:
            intensity = np.asarray(self.intensity, dtype=np.float32).reshape(-1)
            if len(intensity) != n:
                raise ConfigError(f"intensity has {len(intensity)} entries for {n} points")
            object.__setattr__(self, "intensity", _frozen(intensity.copy()))
        if self.ring is not None:
            ring = np.asarray(self.ring, dtype=np.int64).reshape(-1)
            if len(ring) != n:
                raise ConfigError(f"ring has {len(ring)} entries for {n} points")
            if n and ring.min() < 0:
                raise ConfigError("ring indices must be >= 0")
            object.__setattr__(self, "ring", _frozen(ring.copy()))

    def __len__(self) -> int:
        return len(self.xyz)

    @property
    def has_rings(self) -> bool:
        return self.ring is not None

    def subset(self, indices: np.ndarray) -> PointCloud:
        """Select points (keeps the given order, carries intensity and ring along)."""
        indices = np.asarray(indices)
        return PointCloud(
            xyz=self.xyz[indices],
            intensity=None if self.intensity is None else self.intensity[indices],
            ring=None if self.ring is None else self.ring[indices],
        )

    @classmethod
    def empty(cls, with_rings: bool = False) -> PointCloud:
        return cls(
            xyz=np.zeros((0, 3)),
            ring=np.zeros(0, dtype=np.int64) if with_rings else None,
        )


@dataclass(frozen=True)
class Box3D:
    """Axis-aligned box in the sensor frame."""

    lo: Point3
    hi: Point3

    def __post_init__(self) -> None:
        lo, hi = Point3(*map(float, self.lo)), Point3(*map(float, self.hi))
        if any(a > b for a, b in zip(lo, hi)):
            raise ConfigError(f"box min {lo} exceeds max {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_arrays(cls, lo: np.ndarray, hi: np.ndarray) -> Box3D:
        return cls(Point3(*lo.tolist()), Point3(*hi.tolist()))

    @property
    def extent(self) -> tuple[float, float, float]:
        """(length along x, width along y, height along z)."""
        return (self.hi.x - self.lo.x, self.hi.y - self.lo.y, self.hi.z - self.lo.z)

    @property
    def center(self) -> Point3:
        return Point3(*((a + b) / 2.0 for a, b in zip(self.lo, self.hi)))

    @property
    def volume(self) -> float:
        length, width, height = self.extent
        return length * width * height

    def contains(self, xyz: np.ndarray, margin: float = 0.0) -> np.ndarray:
        """Boolean mask of points inside the box inflated by `margin`."""
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        lo = np.asarray(self.lo) - margin
        hi = np.asarray(self.hi) + margin
        return np.all((xyz >= lo) & (xyz <= hi), axis=1)


@dataclass(frozen=True, eq=False)
class Cluster:
    """Point indices into a source cloud sharing one cluster label."""

    indices: np.ndarray
    label: int = 0
    _key: frozenset[int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        indices = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if len(np.unique(indices)) != len(indices):
            raise ConfigError("cluster indices must be unique")
        if self.label < 0:
            raise ConfigError("cluster label must be >= 0")
        object.__setattr__(self, "indices", _frozen(np.sort(indices)))
        object.__setattr__(self, "_key", frozenset(indices.tolist()))

    def __len__(self) -> int:
        return len(self.indices)

    def as_set(self) -> frozenset[int]:
        return self._key


def compute_aabb(cloud: PointCloud, indices: Sequence[int] | np.ndarray) -> Box3D:
    """Componentwise min/max box of the selected points."""
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    if len(indices) == 0:
        raise EmptyInputError("empty cluster")
    if indices.min() < 0 or indices.max() >= len(cloud):
        raise IndexError(f"cluster index out of range for cloud of {len(cloud)} points")
    selected = cloud.xyz[indices]
    return Box3D.from_arrays(selected.min(axis=0), selected.max(axis=0))


def sample_points(points: np.ndarray, n: int, seed: int | np.random.Generator) -> np.ndarray:
    """Draw exactly `n` points; without replacement when enough exist, with replacement otherwise."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if n < 1:
        raise ConfigError("sample size must be >= 1")
    if len(points) == 0:
        raise EmptyInputError("cannot sample from an empty point set")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    chosen = rng.choice(len(points), size=n, replace=len(points) < n)
    return points[chosen]


def partition_key(clusters: Iterable[Cluster]) -> frozenset[frozenset[int]]:
    """Label-free representation of a clustering, for partition equality."""
    return frozenset(c.as_set() for c in clusters)


def parallel_map(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> list[R]:
    """Order-preserving map; runs inline when `threads` is 1."""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
