"""Labelled synthetic LiDAR scenes for desk-scale testing, tuning and training.

A scene is piecewise-planar terrain plus simple object primitives, scanned by a simulated
multi-ring sensor. The scene frame is ground-anchored: the sensor sits at
(0, 0, sensor_height) and terrain heights are given directly in that frame.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Literal

import numpy as np
import yaml

from lidar_proposals.core import Box3D, ObjectClass, PointCloud
from lidar_proposals.errors import SceneSpecError
from lidar_proposals.ingest import CalibrationSet, GroundTruthObject

logger = logging.getLogger(__name__)

GROUND_TAG = -1
SPURIOUS_TAG = -2

Shape = Literal["box", "cylinder", "lshape"]


@dataclass(frozen=True)
class TerrainPatch:
    """Plane z = a*x + b*y + c over the half-open rectangle [x_min, x_max) x [y_min, y_max)."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0

    def height(self, x: np.ndarray | float, y: np.ndarray | float) -> np.ndarray | float:
        return self.a * x + self.b * y + self.c

    def covers(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return (x >= self.x_min) & (x < self.x_max) & (y >= self.y_min) & (y < self.y_max)

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


@dataclass(frozen=True)
class ObjectPrimitive:
    """Axis-aligned object shape standing on the terrain.

    `length` runs along x, `width` along y; `clearance` lifts the shape off the ground.
    Cylinders use `width` as diameter. L-shapes are a low bar along x with an upright block
    over its rear end, a stand-in for a cyclist.
    """

    cls: ObjectClass
    shape: Shape
    x: float
    y: float
    length: float
    width: float
    height: float
    clearance: float = 0.0

    def solids(self, ground_z: float) -> list[tuple[str, np.ndarray, np.ndarray]]:
        """(kind, lo, hi) solids in scene coordinates."""
        z0 = ground_z + self.clearance
        half = np.array([self.length / 2.0, self.width / 2.0])
        lo = np.array([self.x - half[0], self.y - half[1], z0])
        hi = np.array([self.x + half[0], self.y + half[1], z0 + self.height])
        if self.shape == "box":
            return [("box", lo, hi)]
        if self.shape == "cylinder":
            return [("cylinder", lo, hi)]
        bar_height = self.height * 0.55
        bar_hi = hi.copy()
        bar_hi[2] = z0 + bar_height
        upright_lo = np.array([lo[0], lo[1], z0 + bar_height])
        upright_hi = np.array([lo[0] + min(0.6, self.length), hi[1], hi[2]])
        return [("box", lo, bar_hi), ("box", upright_lo, upright_hi)]

    def footprint(self) -> tuple[float, float, float, float]:
        return (
            self.x - self.length / 2.0,
            self.x + self.length / 2.0,
            self.y - self.width / 2.0,
            self.y + self.width / 2.0,
        )


@dataclass(frozen=True)
class LidarModel:
    """Rotating multi-ring sensor; ring 0 is the top scan line."""

    n_rings: int = 64
    top_angle_deg: float = 2.0
    bottom_angle_deg: float = -24.8
    azimuth_resolution_deg: float = 0.2
    azimuth_min_deg: float = -90.0
    azimuth_max_deg: float = 90.0
    sensor_height: float = 1.73
    max_range: float = 100.0
    noise_sigma: float = 0.02

    def ring_angles(self) -> np.ndarray:
        if self.n_rings == 1:
            return np.radians(np.array([self.top_angle_deg]))
        return np.radians(np.linspace(self.top_angle_deg, self.bottom_angle_deg, self.n_rings))

    def azimuths(self) -> np.ndarray:
        count = int(round((self.azimuth_max_deg - self.azimuth_min_deg) / self.azimuth_resolution_deg))
        return np.radians(self.azimuth_min_deg + self.azimuth_resolution_deg * np.arange(count))


@dataclass(frozen=True)
class SceneSpec:
    region: tuple[float, float, float, float] = (0.0, 70.0, -40.0, 40.0)
    terrain: tuple[TerrainPatch, ...] = ()
    objects: tuple[ObjectPrimitive, ...] = ()
    lidar: LidarModel = field(default_factory=LidarModel)
    spurious_returns: int = 0

    def with_terrain(self, *patches: TerrainPatch) -> SceneSpec:
        return replace(self, terrain=tuple(patches))

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> SceneSpec:
        terrain = tuple(TerrainPatch(**p) for p in data.get("terrain", ()))
        objects = tuple(
            ObjectPrimitive(**{**o, "cls": ObjectClass[str(o["cls"]).upper()]})
            for o in data.get("objects", ())
        )
        return cls(
            region=tuple(data.get("region", cls.region)),
            terrain=terrain,
            objects=objects,
            lidar=LidarModel(**data.get("lidar", {})),
            spurious_returns=int(data.get("spurious_returns", 0)),
        )

    def to_mapping(self) -> dict[str, Any]:
        data = asdict(self)
        data["region"] = list(self.region)
        data["terrain"] = [asdict(p) for p in self.terrain]
        data["objects"] = [{**asdict(o), "cls": o.cls.name} for o in self.objects]
        return data


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    """Generated cloud with ground truth; `tags` marks ground, spurious hits or the object index."""

    cloud: PointCloud
    objects: list[GroundTruthObject]
    terrain: tuple[TerrainPatch, ...]
    tags: np.ndarray
    spec: SceneSpec

    @property
    def ground_mask(self) -> np.ndarray:
        return self.tags == GROUND_TAG

    @property
    def object_mask(self) -> np.ndarray:
        return self.tags >= 0


def flat_terrain(region: tuple[float, float, float, float], z: float = 0.0) -> TerrainPatch:
    x_min, x_max, y_min, y_max = region
    return TerrainPatch(x_min, x_max, y_min, y_max, c=z)


def step_terrain(
    region: tuple[float, float, float, float], step_x: float, low: float = 0.0, high: float = 1.0
) -> tuple[TerrainPatch, TerrainPatch]:
    """Two flat patches split at x = step_x."""
    x_min, x_max, y_min, y_max = region
    return (
        TerrainPatch(x_min, step_x, y_min, y_max, c=low),
        TerrainPatch(step_x, x_max, y_min, y_max, c=high),
    )


def load_scene_spec(path: str | Path) -> SceneSpec:
    with Path(path).open(encoding="utf-8") as fh:
        return SceneSpec.from_mapping(yaml.safe_load(fh) or {})


def save_scene_spec(path: str | Path, spec: SceneSpec) -> None:
    Path(path).write_text(yaml.safe_dump(spec.to_mapping(), sort_keys=False), encoding="utf-8")


def generate_scene(spec: SceneSpec, seed: int) -> SyntheticScene:
    """Scan the scene ring by ring, nearest hit per ray, with range noise truncated at 3 sigma."""
    _validate(spec)
    rng = np.random.default_rng(seed)
    lidar = spec.lidar
    origin = np.array([0.0, 0.0, lidar.sensor_height])

    elevation = lidar.ring_angles()
    azimuth = lidar.azimuths()
    ring_grid, az_grid = np.meshgrid(np.arange(len(elevation)), azimuth, indexing="ij")
    ring_ids = ring_grid.reshape(-1)
    phi = elevation[ring_ids]
    theta = az_grid.reshape(-1)
    directions = np.column_stack([np.cos(phi) * np.cos(theta), np.cos(phi) * np.sin(theta), np.sin(phi)])

    best_t = np.full(len(directions), np.inf)
    best_tag = np.full(len(directions), GROUND_TAG, dtype=np.int64)

    for patch in spec.terrain:
        t = _intersect_plane(origin, directions, patch)
        _keep_nearest(best_t, best_tag, t, GROUND_TAG)

    for index, primitive in enumerate(spec.objects):
        ground_z = float(_terrain_height(spec.terrain, primitive.x, primitive.y))
        for kind, lo, hi in primitive.solids(ground_z):
            if kind == "box":
                t = _intersect_box(origin, directions, lo, hi)
            else:
                t = _intersect_cylinder(origin, directions, lo, hi)
            _keep_nearest(best_t, best_tag, t, index)

    hit = np.isfinite(best_t) & (best_t <= lidar.max_range)
    if spec.spurious_returns:
        candidates = np.flatnonzero(hit)
        chosen = rng.choice(candidates, size=min(spec.spurious_returns, len(candidates)), replace=False)
        best_t[chosen] = rng.uniform(2.0, np.maximum(best_t[chosen] * 0.8, 2.5))
        best_tag[chosen] = SPURIOUS_TAG

    noise = np.clip(rng.standard_normal(len(best_t)), -3.0, 3.0) * lidar.noise_sigma
    points = origin + directions * np.where(hit, best_t + noise, 0.0)[:, None]

    x_min, x_max, y_min, y_max = spec.region
    inside = (points[:, 0] >= x_min) & (points[:, 0] < x_max) & (points[:, 1] >= y_min) & (points[:, 1] < y_max)
    keep = np.flatnonzero(hit & inside)

    cloud = PointCloud(xyz=points[keep], ring=ring_ids[keep])
    bound = 3.0 * lidar.noise_sigma
    objects = [_ground_truth(p, spec.terrain, bound) for p in spec.objects]
    logger.debug("generated scene: %d points, %d objects", len(keep), len(objects))
    return SyntheticScene(cloud=cloud, objects=objects, terrain=spec.terrain, tags=best_tag[keep], spec=spec)


_CLASS_SIZES: dict[ObjectClass, tuple[Shape, tuple[float, float], tuple[float, float], tuple[float, float], float]] = {
    # shape, length range, width range, height range, clearance
    ObjectClass.CAR: ("box", (3.8, 4.6), (1.6, 1.9), (1.35, 1.55), 0.3),
    ObjectClass.VAN: ("box", (4.6, 5.4), (1.8, 2.05), (1.8, 2.2), 0.3),
    ObjectClass.PEDESTRIAN: ("cylinder", (0.5, 0.7), (0.5, 0.7), (1.55, 1.85), 0.0),
    ObjectClass.CYCLIST: ("lshape", (1.6, 1.9), (0.5, 0.7), (1.6, 1.85), 0.0),
}


def random_scene_spec(
    seed: int,
    n_objects: int = 8,
    n_clutter: int = 6,
    spurious_returns: int = 150,
    terrain: tuple[TerrainPatch, ...] | None = None,
    lidar: LidarModel | None = None,
    region: tuple[float, float, float, float] = (0.0, 70.0, -40.0, 40.0),
    max_distance: float = 40.0,
) -> SceneSpec:
    """KITTI-like street scene: object classes in rough KITTI proportions plus background clutter."""
    rng = np.random.default_rng(seed)
    placed: list[ObjectPrimitive] = []
    classes = [ObjectClass.CAR, ObjectClass.PEDESTRIAN, ObjectClass.VAN, ObjectClass.CYCLIST]
    weights = np.array([0.55, 0.2, 0.12, 0.13])
    for _ in range(n_objects):
        cls = classes[int(rng.choice(len(classes), p=weights))]
        shape, lengths, widths, heights, clearance = _CLASS_SIZES[cls]
        length = rng.uniform(*lengths)
        width = length if shape == "cylinder" else rng.uniform(*widths)
        _place(rng, placed, max_distance, ObjectPrimitive(cls, shape, 0.0, 0.0, length, width, rng.uniform(*heights), clearance))

    for _ in range(n_clutter):
        kind = rng.choice(["wall", "pole", "bush"])
        if kind == "wall":
            along_x = rng.random() < 0.5
            size = rng.uniform(10.0, 18.0)
            length, width = (size, 0.3) if along_x else (0.3, size)
            primitive = ObjectPrimitive(ObjectClass.BACKGROUND, "box", 0.0, 0.0, length, width, rng.uniform(2.0, 3.0))
        elif kind == "pole":
            primitive = ObjectPrimitive(ObjectClass.BACKGROUND, "cylinder", 0.0, 0.0, 0.2, 0.2, rng.uniform(2.5, 4.0))
        else:
            size = rng.uniform(1.0, 2.0)
            primitive = ObjectPrimitive(ObjectClass.BACKGROUND, "box", 0.0, 0.0, size, size, 0.4)
        _place(rng, placed, max_distance + 10.0, primitive)

    return SceneSpec(
        region=region,
        terrain=terrain if terrain is not None else (flat_terrain(region),),
        objects=tuple(placed),
        lidar=lidar or LidarModel(),
        spurious_returns=spurious_returns,
    )


def _place(rng: np.random.Generator, placed: list[ObjectPrimitive], max_distance: float, primitive: ObjectPrimitive) -> None:
    """Rejection-sample a position in the forward sector with a 1 m gap to earlier footprints."""
    for _ in range(200):
        distance = rng.uniform(6.0, max_distance)
        bearing = rng.uniform(-math.radians(60.0), math.radians(60.0))
        candidate = replace(primitive, x=distance * math.cos(bearing), y=distance * math.sin(bearing))
        if not any(_footprints_overlap(candidate, other, gap=1.0) for other in placed):
            placed.append(candidate)
            return
    logger.debug("could not place %s after 200 attempts", primitive.cls.name)


def _footprints_overlap(a: ObjectPrimitive, b: ObjectPrimitive, gap: float = 0.0) -> bool:
    ax0, ax1, ay0, ay1 = a.footprint()
    bx0, bx1, by0, by1 = b.footprint()
    return ax0 < bx1 + gap and bx0 < ax1 + gap and ay0 < by1 + gap and by0 < ay1 + gap


def _validate(spec: SceneSpec) -> None:
    if not spec.terrain:
        raise SceneSpecError("scene needs at least one terrain patch")
    x_min, x_max, y_min, y_max = spec.region
    if x_min >= x_max or y_min >= y_max:
        raise SceneSpecError(f"empty region {spec.region}")
    for i, p in enumerate(spec.terrain):
        if p.x_min < x_min or p.x_max > x_max or p.y_min < y_min or p.y_max > y_max:
            raise SceneSpecError(f"terrain patch {i} leaves the region")
        for j, q in enumerate(spec.terrain[i + 1 :], start=i + 1):
            if p.x_min < q.x_max and q.x_min < p.x_max and p.y_min < q.y_max and q.y_min < p.y_max:
                raise SceneSpecError(f"terrain patches {i} and {j} overlap")
    if not math.isclose(sum(p.area for p in spec.terrain), (x_max - x_min) * (y_max - y_min), rel_tol=1e-9):
        raise SceneSpecError("terrain patches do not tile the region")
    for i, a in enumerate(spec.objects):
        for j, b in enumerate(spec.objects[i + 1 :], start=i + 1):
            if _footprints_overlap(a, b):
                raise SceneSpecError(f"objects {i} and {j} have overlapping footprints")


def _terrain_height(terrain: tuple[TerrainPatch, ...], x: float, y: float) -> float:
    for patch in terrain:
        if patch.x_min <= x < patch.x_max and patch.y_min <= y < patch.y_max:
            return float(patch.height(x, y))
    return float(terrain[0].height(x, y))


def _ground_truth(primitive: ObjectPrimitive, terrain: tuple[TerrainPatch, ...], bound: float) -> GroundTruthObject:
    solids = primitive.solids(_terrain_height(terrain, primitive.x, primitive.y))
    lo = np.min([s[1] for s in solids], axis=0) - bound
    hi = np.max([s[2] for s in solids], axis=0) + bound
    box = Box3D.from_arrays(lo, hi)
    return GroundTruthObject(
        cls=primitive.cls,
        box=box,
        center=box.center,
        kitti_type=primitive.cls.name.title() if primitive.cls is not ObjectClass.BACKGROUND else "Misc",
        **_camera_fields(box),
    )


def _camera_fields(box: Box3D) -> dict[str, Any]:
    """KITTI label fields for an axis-aligned sensor-frame box under `synthetic_calibration`."""
    length, width, height = box.extent
    center = box.center
    return {
        "dimensions_hwl": (height, width, length),
        "camera_location": (-center.y, -box.lo.z, center.x),
        "rotation_y": -math.pi / 2.0,
    }


def to_sensor_frame(scene: SyntheticScene) -> tuple[PointCloud, list[GroundTruthObject]]:
    """Shift a scene down by the sensor height so the sensor sits at the origin, as KITTI clouds do."""
    offset = np.array([0.0, 0.0, scene.spec.lidar.sensor_height])
    cloud = PointCloud(scene.cloud.xyz - offset, scene.cloud.intensity, scene.cloud.ring)
    objects = []
    for obj in scene.objects:
        box = Box3D.from_arrays(np.asarray(obj.box.lo) - offset, np.asarray(obj.box.hi) - offset)
        objects.append(replace(obj, box=box, center=box.center, **_camera_fields(box)))
    return cloud, objects


def synthetic_calibration() -> CalibrationSet:
    """Standard KITTI axis permutation (camera z forward, x right, y down), no offsets."""
    velo_to_cam = np.array([[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [1.0, 0.0, 0.0, 0.0]])
    return CalibrationSet(velo_to_cam=velo_to_cam, rectification=np.eye(3), projection=np.hstack([np.eye(3), np.zeros((3, 1))]))


def _keep_nearest(best_t: np.ndarray, best_tag: np.ndarray, t: np.ndarray, tag: int) -> None:
    closer = t < best_t
    best_t[closer] = t[closer]
    best_tag[closer] = tag


def _intersect_plane(origin: np.ndarray, directions: np.ndarray, patch: TerrainPatch) -> np.ndarray:
    denom = directions[:, 2] - patch.a * directions[:, 0] - patch.b * directions[:, 1]
    numer = patch.c + patch.a * origin[0] + patch.b * origin[1] - origin[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = numer / denom
    t = np.where((denom != 0) & (t > 0), t, np.inf)
    finite = np.isfinite(t)
    hits = origin + directions[finite] * t[finite, None]
    inside = patch.covers(hits[:, 0], hits[:, 1])
    out = np.full(len(t), np.inf)
    out[np.flatnonzero(finite)[inside]] = t[finite][inside]
    return out


def _intersect_box(origin: np.ndarray, directions: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Slab test; entry distance of rays starting outside the box."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / directions
        t1 = (lo - origin) * inv
        t2 = (hi - origin) * inv
    t_near = np.nanmax(np.minimum(t1, t2), axis=1)
    t_far = np.nanmin(np.maximum(t1, t2), axis=1)
    valid = (t_near <= t_far) & (t_near > 0)
    return np.where(valid, t_near, np.inf)


def _intersect_cylinder(origin: np.ndarray, directions: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Vertical cylinder inscribed in the box footprint: side wall plus top cap."""
    center = (lo[:2] + hi[:2]) / 2.0
    radius = (hi[0] - lo[0]) / 2.0
    oxy = origin[:2] - center
    dxy = directions[:, :2]
    a = np.sum(dxy * dxy, axis=1)
    b = 2.0 * dxy @ oxy
    c = oxy @ oxy - radius * radius
    disc = b * b - 4.0 * a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        t_side = (-b - np.sqrt(np.where(disc >= 0, disc, np.nan))) / (2.0 * a)
    z_side = origin[2] + t_side * directions[:, 2]
    side_ok = (disc >= 0) & (t_side > 0) & (z_side >= lo[2]) & (z_side <= hi[2])
    side = np.where(side_ok, t_side, np.inf)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_cap = (hi[2] - origin[2]) / directions[:, 2]
    cap_xy = oxy + dxy * np.where(np.isfinite(t_cap), t_cap, 0.0)[:, None]
    cap_ok = np.isfinite(t_cap) & (t_cap > 0) & (np.sum(cap_xy * cap_xy, axis=1) <= radius * radius)
    cap = np.where(cap_ok, t_cap, np.inf)
    return np.minimum(side, cap)


__all__ = [
    "GROUND_TAG",
    "SPURIOUS_TAG",
    "LidarModel",
    "ObjectPrimitive",
    "SceneSpec",
    "SyntheticScene",
    "TerrainPatch",
    "flat_terrain",
    "generate_scene",
    "load_scene_spec",
    "random_scene_spec",
    "save_scene_spec",
    "step_terrain",
    "synthetic_calibration",
    "to_sensor_frame",
]
