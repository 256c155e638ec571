"""Piecewise-constant ground estimation and removal, with a single-plane RANSAC baseline."""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from lidar_proposals.core import PointCloud, parallel_map
from lidar_proposals.errors import ConfigError, FitError

logger = logging.getLogger(__name__)

EMPTY = np.inf


@dataclass(frozen=True)
class GroundGridConfig:
    """Grid over x in [x_min, x_min + length) and y in [y_min, y_min + width)."""

    width: float = 80.0
    length: float = 70.0
    sub_width: float = 4.0
    sub_length: float = 3.5
    bin_width: float = 0.15
    ground_ratio: float = 0.05
    x_min: float = 0.0
    y_min: float = -40.0

    def __post_init__(self) -> None:
        if min(self.width, self.length, self.sub_width, self.sub_length) <= 0:
            raise ConfigError("grid dimensions must be positive")
        if self.sub_width > self.width or self.sub_length > self.length:
            raise ConfigError("subregion larger than region")
        if self.bin_width <= 0:
            raise ConfigError("bin_width must be > 0")
        if not 0.0 < self.ground_ratio < 1.0:
            raise ConfigError("ground_ratio must lie in (0, 1)")

    @property
    def shape(self) -> tuple[int, int]:
        """(rows along x, columns along y)."""
        return (math.ceil(self.length / self.sub_length), math.ceil(self.width / self.sub_width))

    def cell_index(self, xyz: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Row, column and in-region mask for each point."""
        rows_n, cols_n = self.shape
        row = np.floor((xyz[:, 0] - self.x_min) / self.sub_length).astype(np.int64)
        col = np.floor((xyz[:, 1] - self.y_min) / self.sub_width).astype(np.int64)
        inside = (
            (xyz[:, 0] >= self.x_min)
            & (xyz[:, 0] < self.x_min + self.length)
            & (xyz[:, 1] >= self.y_min)
            & (xyz[:, 1] < self.y_min + self.width)
            & (row < rows_n)
            & (col < cols_n)
        )
        return row, col, inside


@dataclass(frozen=True, eq=False)
class GroundGrid:
    heights: np.ndarray
    config: GroundGridConfig

    def is_empty(self) -> np.ndarray:
        return np.isinf(self.heights)

    def height_at(self, xyz: np.ndarray) -> np.ndarray:
        """Ground height under each point; EMPTY outside the region or over empty cells."""
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        row, col, inside = self.config.cell_index(xyz)
        out = np.full(len(xyz), EMPTY)
        out[inside] = self.heights[row[inside], col[inside]]
        return out

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "col", "height"])
            for (row, col), height in np.ndenumerate(self.heights):
                writer.writerow([row, col, "" if np.isinf(height) else f"{height:.4f}"])


@dataclass(frozen=True)
class GroundRemovalReport:
    removed: int
    total: int

    def __post_init__(self) -> None:
        if not 0 <= self.removed <= self.total:
            raise ConfigError(f"removed count {self.removed} outside [0, {self.total}]")

    @property
    def gamma(self) -> float:
        return self.removed / self.total if self.total else 0.0


@dataclass(frozen=True)
class Plane:
    """Unit-normal plane a*x + b*y + c*z + d = 0 with c >= 0."""

    a: float
    b: float
    c: float
    d: float

    def height_above(self, xyz: np.ndarray) -> np.ndarray:
        """Vertical offset of each point above the plane."""
        if self.c == 0.0:
            raise FitError("vertical plane has no height function")
        return (xyz @ np.array([self.a, self.b, self.c]) + self.d) / self.c


@dataclass(frozen=True)
class GammaRow:
    offset: float
    gamma_pwc: float
    gamma_ransac: float


def build_ground_grid(cloud: PointCloud, cfg: GroundGridConfig, threads: int = 1) -> GroundGrid:
    """Lowest histogram bin holding at least ceil(ratio * n) of a cell's points sets its height.

    Bins start at the cell's minimum z, so every height is the lower edge of an occupied bin.
    """
    rows_n, cols_n = cfg.shape
    heights = np.full((rows_n, cols_n), EMPTY)
    if len(cloud) == 0:
        return GroundGrid(heights, cfg)
    row, col, inside = cfg.cell_index(cloud.xyz)
    row, col, z = row[inside], col[inside], cloud.xyz[inside, 2]

    bands = np.array_split(np.arange(rows_n), max(1, min(threads, rows_n)))

    def band_heights(band: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mask = (row >= band[0]) & (row <= band[-1]) if len(band) else np.zeros(len(row), bool)
        cells = row[mask] * cols_n + col[mask]
        return _cell_heights(cells, z[mask], cfg)

    for cells, values in parallel_map(band_heights, bands, threads):
        heights.reshape(-1)[cells] = values
    logger.debug("ground grid: %d of %d cells occupied", int(np.isfinite(heights).sum()), heights.size)
    return GroundGrid(heights, cfg)


def _cell_heights(cells: np.ndarray, z: np.ndarray, cfg: GroundGridConfig) -> tuple[np.ndarray, np.ndarray]:
    if len(cells) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    order = np.lexsort((z, cells))
    cells, z = cells[order], z[order]
    unique_cells, first, counts = np.unique(cells, return_index=True, return_counts=True)
    cell_min = z[first]
    slot = np.repeat(np.arange(len(unique_cells)), counts)
    bins = np.floor((z - cell_min[slot]) / cfg.bin_width).astype(np.int64)

    pair, pair_counts = np.unique(np.column_stack([slot, bins]), axis=0, return_counts=True)
    needed = np.maximum(1, np.ceil(cfg.ground_ratio * counts - 1e-12)).astype(np.int64)
    qualifying = pair[pair_counts >= needed[pair[:, 0]]]

    heights = cell_min.copy()
    if len(qualifying):
        # rows are sorted by (slot, bin), so the first row per slot is the lowest qualifying bin
        slots, first_row = np.unique(qualifying[:, 0], return_index=True)
        heights[slots] = cell_min[slots] + qualifying[first_row, 1] * cfg.bin_width
    return unique_cells, heights


def postprocess_grid(grid: GroundGrid) -> GroundGrid:
    """One synchronous pass: each cell takes the minimum over its 8-neighbourhood and itself."""
    lowered = ndimage.minimum_filter(grid.heights, size=3, mode="constant", cval=EMPTY)
    return GroundGrid(lowered, grid.config)


def ground_mask(cloud: PointCloud, grid: GroundGrid, offset: float) -> np.ndarray:
    if offset < 0:
        raise ConfigError("ground offset must be >= 0")
    height = grid.height_at(cloud.xyz)
    return np.isfinite(height) & (cloud.xyz[:, 2] <= height + offset)


def remove_ground(cloud: PointCloud, grid: GroundGrid, offset: float) -> tuple[PointCloud, GroundRemovalReport]:
    """Drop points within `offset` of their cell's ground height; order and rings are kept."""
    removed = ground_mask(cloud, grid, offset)
    kept = cloud.subset(np.flatnonzero(~removed))
    return kept, GroundRemovalReport(removed=int(removed.sum()), total=len(cloud))


def ransac_plane(
    cloud: PointCloud | np.ndarray,
    iterations: int = 200,
    inlier_tol: float = 0.1,
    seed: int = 0,
) -> Plane:
    xyz = cloud.xyz if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if len(xyz) < 3:
        raise FitError(f"plane fit needs 3 points, got {len(xyz)}")
    if np.linalg.matrix_rank(xyz - xyz.mean(axis=0), tol=1e-9) < 2:
        raise FitError("points are collinear")
    rng = np.random.default_rng(seed)

    best_count = -1
    best_inliers: np.ndarray | None = None
    chunk = 16
    for start in range(0, iterations, chunk):
        samples = np.stack([rng.choice(len(xyz), size=3, replace=False) for _ in range(min(chunk, iterations - start))])
        p0, p1, p2 = xyz[samples[:, 0]], xyz[samples[:, 1]], xyz[samples[:, 2]]
        normals = np.cross(p1 - p0, p2 - p0)
        norms = np.linalg.norm(normals, axis=1)
        valid = norms > 1e-12
        if not valid.any():
            continue
        normals = normals[valid] / norms[valid, None]
        offsets = -np.sum(normals * p0[valid], axis=1)
        inliers = np.abs(xyz @ normals.T + offsets) < inlier_tol
        counts = inliers.sum(axis=0)
        winner = int(np.argmax(counts))
        if counts[winner] > best_count:
            best_count = int(counts[winner])
            best_inliers = inliers[:, winner]

    support = xyz[best_inliers] if best_inliers is not None and best_count >= 3 else xyz
    return _least_squares_plane(support)


def _least_squares_plane(xyz: np.ndarray) -> Plane:
    centroid = xyz.mean(axis=0)
    _, _, vt = np.linalg.svd(xyz - centroid, full_matrices=False)
    normal = vt[-1]
    if normal[2] < 0:
        normal = -normal
    d = -float(normal @ centroid)
    return Plane(float(normal[0]), float(normal[1]), float(normal[2]), d)


def gamma_sweep(cloud: PointCloud, grid: GroundGrid, plane: Plane, offsets: Sequence[float]) -> list[GammaRow]:
    """Removed-point ratio of the grid and of the plane at each offset."""
    if list(offsets) != sorted(offsets):
        raise ConfigError("offsets must be sorted ascending")
    total = len(cloud)
    if total == 0:
        return [GammaRow(float(o), 0.0, 0.0) for o in offsets]
    ground = grid.height_at(cloud.xyz)
    grid_height = np.where(np.isfinite(ground), cloud.xyz[:, 2] - ground, np.inf)
    plane_height = plane.height_above(cloud.xyz)
    return [
        GammaRow(
            offset=float(o),
            gamma_pwc=float(np.count_nonzero(grid_height <= o)) / total,
            gamma_ransac=float(np.count_nonzero(plane_height <= o)) / total,
        )
        for o in offsets
    ]


def mean_gamma_sweep(
    clouds: Sequence[PointCloud],
    cfg: GroundGridConfig,
    offsets: Sequence[float],
    iterations: int = 200,
    inlier_tol: float = 0.1,
    seed: int = 0,
    threads: int = 1,
) -> list[GammaRow]:
    """Per-frame sweeps averaged over frames."""
    if not clouds:
        return [GammaRow(float(o), 0.0, 0.0) for o in offsets]

    def sweep(item: tuple[int, PointCloud]) -> list[GammaRow]:
        index, cloud = item
        grid = postprocess_grid(build_ground_grid(cloud, cfg))
        plane = ransac_plane(cloud, iterations=iterations, inlier_tol=inlier_tol, seed=seed + index)
        return gamma_sweep(cloud, grid, plane, offsets)

    tables = parallel_map(sweep, list(enumerate(clouds)), threads)
    pwc = np.mean([[row.gamma_pwc for row in table] for table in tables], axis=0)
    ransac = np.mean([[row.gamma_ransac for row in table] for table in tables], axis=0)
    return [GammaRow(float(o), float(p), float(r)) for o, p, r in zip(offsets, pwc, ransac)]


def write_gamma_csv(path: str | Path, rows: Sequence[GammaRow]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["offset", "gamma_pwc", "gamma_ransac"])
        for row in rows:
            writer.writerow([f"{row.offset:.4f}", f"{row.gamma_pwc:.6f}", f"{row.gamma_ransac:.6f}"])
