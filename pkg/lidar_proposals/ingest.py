"""KITTI point clouds, labels and calibration, plus scan-ring recovery."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from lidar_proposals.core import Box3D, ObjectClass, Point3, PointCloud
from lidar_proposals.errors import (
    CalibrationError,
    ConfigError,
    EmptyInputError,
    FormatError,
    LabelParseError,
)

logger = logging.getLogger(__name__)

_RECORD = np.dtype("<f4")
_RECORD_BYTES = 16
_ORTHO_TOL = 1e-4


@dataclass(frozen=True)
class GroundTruthObject:
    """One labelled object with its sensor-frame AABB; raw KITTI fields kept for audit."""

    cls: ObjectClass
    box: Box3D
    center: Point3
    kitti_type: str = ""
    dimensions_hwl: tuple[float, float, float] = (0.0, 0.0, 0.0)
    camera_location: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation_y: float = 0.0


@dataclass(frozen=True, eq=False)
class CalibrationSet:
    velo_to_cam: np.ndarray
    rectification: np.ndarray
    projection: np.ndarray

    def __post_init__(self) -> None:
        velo_to_cam = np.asarray(self.velo_to_cam, dtype=np.float64).reshape(3, 4)
        rect = np.asarray(self.rectification, dtype=np.float64).reshape(3, 3)
        projection = np.asarray(self.projection, dtype=np.float64).reshape(3, 4)
        for name, rotation in (("Tr_velo_to_cam", velo_to_cam[:, :3]), ("R0_rect", rect)):
            if not np.allclose(rotation @ rotation.T, np.eye(3), atol=_ORTHO_TOL):
                raise CalibrationError(f"{name} rotation is not orthonormal")
        object.__setattr__(self, "velo_to_cam", velo_to_cam)
        object.__setattr__(self, "rectification", rect)
        object.__setattr__(self, "projection", projection)

    @classmethod
    def identity(cls) -> CalibrationSet:
        return cls(
            velo_to_cam=np.hstack([np.eye(3), np.zeros((3, 1))]),
            rectification=np.eye(3),
            projection=np.hstack([np.eye(3), np.zeros((3, 1))]),
        )

    def rect_to_velo(self, points: np.ndarray) -> np.ndarray:
        """Map rectified-camera points (n, 3) into the sensor frame."""
        velo_to_rect = np.eye(4)
        velo_to_rect[:3, :4] = self.velo_to_cam
        rect = np.eye(4)
        rect[:3, :3] = self.rectification
        velo_to_rect = rect @ velo_to_rect
        homogeneous = np.hstack([points, np.ones((len(points), 1))])
        return (np.linalg.inv(velo_to_rect) @ homogeneous.T).T[:, :3]


@dataclass(frozen=True)
class KittiFrame:
    """Paths of one KITTI sample; label and calibration are optional for inference."""

    frame_id: str
    velodyne: Path
    label: Path | None = None
    calib: Path | None = None


def load_velodyne(path: str | Path) -> PointCloud:
    """Parse little-endian float32 (x, y, z, reflectance) records."""
    path = Path(path)
    size = path.stat().st_size
    if size % _RECORD_BYTES:
        raise FormatError(f"{path}: size {size} is not a multiple of {_RECORD_BYTES} bytes")
    raw = np.fromfile(path, dtype=_RECORD).reshape(-1, 4)
    bad = ~np.all(np.isfinite(raw), axis=1)
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        raise FormatError(f"{path}: record {first} has non-finite values")
    return PointCloud(xyz=raw[:, :3].astype(np.float64), intensity=raw[:, 3])


def save_velodyne(path: str | Path, cloud: PointCloud) -> None:
    """Inverse of load_velodyne; missing reflectance is written as zero."""
    records = np.zeros((len(cloud), 4), dtype=_RECORD)
    records[:, :3] = cloud.xyz
    if cloud.intensity is not None:
        records[:, 3] = cloud.intensity
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    records.tofile(path)


def load_calibration(path: str | Path) -> CalibrationSet:
    """Read a KITTI object `calib/*.txt` file (P2, R0_rect, Tr_velo_to_cam)."""
    path = Path(path)
    values: dict[str, np.ndarray] = {}
    with path.open() as fh:
        for line_number, line in enumerate(fh, start=1):
            if ":" not in line:
                continue
            key, content = line.split(":", 1)
            try:
                values[key.strip()] = np.array([float(v) for v in content.split()])
            except ValueError as exc:
                raise FormatError(f"{path}:{line_number}: {exc}") from exc
    missing = [k for k in ("P2", "R0_rect", "Tr_velo_to_cam") if k not in values]
    if missing:
        raise CalibrationError(f"{path}: missing {', '.join(missing)}")
    try:
        return CalibrationSet(
            velo_to_cam=values["Tr_velo_to_cam"].reshape(3, 4),
            rectification=values["R0_rect"].reshape(3, 3),
            projection=values["P2"].reshape(3, 4),
        )
    except ValueError as exc:
        raise CalibrationError(f"{path}: {exc}") from exc


def save_calibration(path: str | Path, calib: CalibrationSet) -> None:
    def fmt(array: np.ndarray) -> str:
        return " ".join(f"{v:.12e}" for v in array.reshape(-1))

    lines = [f"P{i}: {fmt(calib.projection)}" for i in range(4)]
    lines.append(f"R0_rect: {fmt(calib.rectification)}")
    lines.append(f"Tr_velo_to_cam: {fmt(calib.velo_to_cam)}")
    lines.append(f"Tr_imu_to_velo: {fmt(np.hstack([np.eye(3), np.zeros((3, 1))]))}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_labels(label_path: str | Path, calib: CalibrationSet) -> list[GroundTruthObject]:
    """Parse `label_2` lines into sensor-frame AABBs; DontCare lines are dropped."""
    label_path = Path(label_path)
    objects: list[GroundTruthObject] = []
    with label_path.open() as fh:
        for line_number, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) < 15:
                raise LabelParseError(str(label_path), line_number, f"expected 15 fields, got {len(fields)}")
            kitti_type = fields[0]
            if kitti_type == "DontCare":
                continue
            try:
                h, w, l, x, y, z, ry = (float(v) for v in fields[8:15])
            except ValueError as exc:
                raise LabelParseError(str(label_path), line_number, str(exc)) from exc
            corners = calib.rect_to_velo(_camera_box_corners(h, w, l, x, y, z, ry))
            box = Box3D.from_arrays(corners.min(axis=0), corners.max(axis=0))
            objects.append(
                GroundTruthObject(
                    cls=ObjectClass.parse(kitti_type),
                    box=box,
                    center=box.center,
                    kitti_type=kitti_type,
                    dimensions_hwl=(h, w, l),
                    camera_location=(x, y, z),
                    rotation_y=ry,
                )
            )
    return objects


def save_labels(path: str | Path, objects: list[GroundTruthObject]) -> None:
    """Write objects whose audit fields describe a camera-frame box (as produced by scene export)."""
    lines = []
    for obj in objects:
        h, w, l = obj.dimensions_hwl
        x, y, z = obj.camera_location
        lines.append(
            f"{obj.kitti_type or obj.cls.name.title()} 0.00 0 0.00 0.00 0.00 0.00 0.00 "
            f"{h:.4f} {w:.4f} {l:.4f} {x:.4f} {y:.4f} {z:.4f} {obj.rotation_y:.4f}"
        )
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def recover_rings(cloud: PointCloud, n_rings: int = 64) -> PointCloud:
    """Assign ring ids by vertical-angle quantization; ring 0 is the top scan line.

    Points are reordered by (ring, azimuth) so each ring reads as one counterclockwise sweep.
    """
    if n_rings < 1:
        raise ConfigError("n_rings must be >= 1")
    if len(cloud) == 0:
        raise EmptyInputError("cannot recover rings of an empty cloud")
    x, y, z = cloud.xyz.T
    vertical = np.arctan2(z, np.hypot(x, y))
    top, bottom = vertical.max(), vertical.min()
    span = top - bottom
    if span <= 0.0:
        ring = np.zeros(len(cloud), dtype=np.int64)
    else:
        ring = np.floor((top - vertical) / span * n_rings).astype(np.int64)
        ring = np.clip(ring, 0, n_rings - 1)
    azimuth = np.arctan2(y, x)
    order = np.lexsort((azimuth, ring))
    logger.debug("recovered %d rings over %.2f deg", len(np.unique(ring)), np.degrees(span))
    return PointCloud(
        xyz=cloud.xyz[order],
        intensity=None if cloud.intensity is None else cloud.intensity[order],
        ring=ring[order],
    )


def discover_frames(root: str | Path) -> list[KittiFrame]:
    """Find `velodyne/*.bin` under a KITTI object split directory, pairing labels and calib."""
    root = Path(root)
    velodyne_dir = root / "velodyne"
    if not velodyne_dir.is_dir():
        raise FileNotFoundError(f"{velodyne_dir} not found")
    frames = []
    for bin_path in sorted(velodyne_dir.glob("*.bin")):
        label = root / "label_2" / f"{bin_path.stem}.txt"
        calib = root / "calib" / f"{bin_path.stem}.txt"
        frames.append(
            KittiFrame(
                frame_id=bin_path.stem,
                velodyne=bin_path,
                label=label if label.is_file() else None,
                calib=calib if calib.is_file() else None,
            )
        )
    return frames


def load_frame_objects(frame: KittiFrame) -> list[GroundTruthObject]:
    if frame.label is None:
        return []
    calib = load_calibration(frame.calib) if frame.calib is not None else CalibrationSet.identity()
    return load_labels(frame.label, calib)


def _camera_box_corners(h: float, w: float, l: float, x: float, y: float, z: float, ry: float) -> np.ndarray:
    """Eight corners of a KITTI box; location is the bottom-face center in rectified camera coords."""
    xs = np.array([l, l, -l, -l, l, l, -l, -l]) / 2.0
    ys = np.array([0.0, 0.0, 0.0, 0.0, -h, -h, -h, -h])
    zs = np.array([w, -w, -w, w, w, -w, -w, w]) / 2.0
    c, s = np.cos(ry), np.sin(ry)
    rotation = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    corners = rotation @ np.vstack([xs, ys, zs])
    return corners.T + np.array([x, y, z])
