from __future__ import annotations

import csv
import time
import warnings

import pytest

from conftest import car, pedestrian

from lidar_proposals.bench import benchmark, classifier_timing, write_timing_csv
from lidar_proposals.classify import ClassifierConfig, ClassifierModel
from lidar_proposals.cluster import ClusterParams, cluster_distance, cluster_scan
from lidar_proposals.config import PipelineParams
from lidar_proposals.errors import ConfigError, EmptyInputError
from lidar_proposals.ground import GroundGridConfig, build_ground_grid, postprocess_grid, remove_ground
from lidar_proposals.pipeline import Frame
from lidar_proposals.scene import LidarModel, SceneSpec, flat_terrain, generate_scene


@pytest.fixture
def frames(car_scene):
    return [Frame(f"{i:06d}", car_scene.cloud, car_scene.objects) for i in range(3)]


def test_benchmark_skips_warmup_frames(frames, params):
    report = benchmark(frames, params, warmup=1)
    assert report.frames == 2
    assert report.threads == 1
    assert report.points_mean == len(frames[0].cloud)
    assert report.proposals_mean == 1.0
    assert report.classify == 0.0
    assert report.total >= report.segmentation > 0.0


def test_benchmark_with_classifier(frames, tiny_model):
    report = benchmark(frames, PipelineParams(), tiny_model, warmup=0, threads=2)
    assert report.frames == 3
    assert report.threads == 2
    assert report.classify > 0.0


def test_benchmark_needs_measured_frames(frames, params):
    with pytest.raises(EmptyInputError):
        benchmark(frames, params, warmup=3)
    with pytest.raises(ConfigError):
        benchmark(frames, params, warmup=-1)


def test_classifier_timing(tiny_model):
    rows = classifier_timing(tiny_model, point_counts=(16, 32), batch_size=4, repeats=2)
    assert [n for n, _ in rows] == [16, 32]
    assert all(seconds > 0.0 for _, seconds in rows)


def test_timing_csv(frames, params, tmp_path):
    report = benchmark(frames, params, warmup=1)
    write_timing_csv(tmp_path / "timing.csv", [("scan", report)])
    with (tmp_path / "timing.csv").open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["variant"] == "scan"
    assert rows[0]["frames"] == "2"


def _full_sweep():
    """A 360 degree, 64-ring scan of about 100k points with a handful of road users."""
    region = (-90.0, 90.0, -90.0, 90.0)
    lidar = LidarModel(azimuth_min_deg=-180.0, azimuth_max_deg=180.0, max_range=120.0)
    objects = (car(12.0, 5.0), car(-18.0, -4.0), car(25.0, -9.0), car(-6.0, 14.0), pedestrian(8.0, -3.0), pedestrian(-9.0, 6.0))
    spec = SceneSpec(region=region, terrain=(flat_terrain(region),), objects=objects, lidar=lidar, spurious_returns=200)
    return generate_scene(spec, seed=4)


SWEEP_GRID = GroundGridConfig(width=180.0, length=180.0, sub_width=4.0, sub_length=4.0, x_min=-90.0, y_min=-90.0)
SWEEP_PARAMS = PipelineParams(ground=SWEEP_GRID, classify=False)


def _warn_if_slower(label: str, seconds: float, budget: float) -> None:
    if seconds > budget:
        warnings.warn(f"{label} took {seconds * 1000:.1f} ms, budget {budget * 1000:.0f} ms", stacklevel=2)


@pytest.mark.slow
def test_full_sweep_segmentation_timing():
    scene = _full_sweep()
    assert len(scene.cloud) > 95_000
    frames = [Frame(f"{i:06d}", scene.cloud, scene.objects) for i in range(4)]
    report = benchmark(frames, SWEEP_PARAMS, warmup=1)
    assert report.proposals_mean > 0
    _warn_if_slower("ground removal and scan clustering", report.segmentation, 0.100)


@pytest.mark.slow
def test_scan_clustering_beats_exhaustive_distances():
    scene = _full_sweep()
    grid = postprocess_grid(build_ground_grid(scene.cloud, SWEEP_GRID))
    remainder, _ = remove_ground(scene.cloud, grid, 0.26)
    params = ClusterParams()

    start = time.perf_counter()
    scan = cluster_scan(remainder, params)
    scan_seconds = time.perf_counter() - start
    start = time.perf_counter()
    exhaustive = cluster_distance(remainder, params.t_d, backend="exhaustive")
    exhaustive_seconds = time.perf_counter() - start

    assert scan and exhaustive
    if exhaustive_seconds < 10.0 * scan_seconds:
        warnings.warn(
            f"scan clustering {scan_seconds * 1000:.1f} ms is less than 10x faster than "
            f"exhaustive distances {exhaustive_seconds * 1000:.1f} ms",
            stacklevel=1,
        )


@pytest.mark.slow
def test_full_pipeline_timing_with_classifier():
    scene = _full_sweep()
    frames = [Frame(f"{i:06d}", scene.cloud, scene.objects) for i in range(3)]
    segmentation = benchmark(frames, SWEEP_PARAMS, warmup=1).segmentation
    model = ClassifierModel.initialize(ClassifierConfig(), seed=0)
    ((n_points, classify_seconds),) = classifier_timing(model, point_counts=(100,), batch_size=55, repeats=3)
    assert n_points == 100
    _warn_if_slower("full pipeline with 55 proposals of 100 points", segmentation + classify_seconds, 0.250)
