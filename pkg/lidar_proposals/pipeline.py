"""Stage orchestration: ground removal, clustering, filtering and classification of one frame."""

from __future__ import annotations

import logging
import time
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

from lidar_proposals.classify.network import ClassifierModel, Prediction, predict
from lidar_proposals.classify.training import Sample
from lidar_proposals.cluster import cluster_distance, cluster_scan
from lidar_proposals.config import PipelineParams
from lidar_proposals.core import Cluster, ObjectClass, PointCloud, parallel_map
from lidar_proposals.errors import FitError
from lidar_proposals.filtering import (
    MinPointsCurve,
    Proposal,
    curve_samples,
    filter_proposals,
    fit_min_points_curve,
    make_proposals,
)
from lidar_proposals.ground import GroundGrid, GroundRemovalReport, build_ground_grid, postprocess_grid, remove_ground
from lidar_proposals.ingest import GroundTruthObject, KittiFrame, load_frame_objects, load_velodyne, recover_rings
from lidar_proposals.matching import greedy_match
from lidar_proposals.scene import SceneSpec, generate_scene

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Frame:
    frame_id: str
    cloud: PointCloud
    objects: list[GroundTruthObject] = field(default_factory=list)
    source: Path | None = None


@dataclass
class StageTimings:
    ground: float = 0.0
    cluster: float = 0.0
    filter: float = 0.0
    classify: float = 0.0

    @property
    def total(self) -> float:
        return self.ground + self.cluster + self.filter + self.classify


@dataclass(eq=False)
class ProposalResult:
    """Proposals index into `cloud`, the non-ground remainder of the input."""

    cloud: PointCloud
    proposals: list[Proposal]
    kept: list[Proposal]
    ground: GroundRemovalReport
    timings: StageTimings
    grid: GroundGrid | None = None


@dataclass(frozen=True)
class Detection:
    proposal: Proposal
    prediction: Prediction | None

    @property
    def label(self) -> str:
        return self.prediction.cls.name.lower() if self.prediction else "unclassified"


def load_kitti_frame(frame: KittiFrame, n_rings: int = 64) -> Frame:
    cloud = load_velodyne(frame.velodyne)
    if len(cloud):
        cloud = recover_rings(cloud, n_rings)
    return Frame(frame.frame_id, cloud, load_frame_objects(frame), frame.velodyne)


def synthetic_frames(specs: Sequence[SceneSpec], seed: int = 0) -> list[Frame]:
    frames = []
    for index, spec in enumerate(specs):
        scene = generate_scene(spec, seed + index)
        frames.append(Frame(f"{index:06d}", scene.cloud, scene.objects))
    return frames


def fit_curve(frames: Sequence[Frame], params: PipelineParams, interval: float = 0.5) -> MinPointsCurve:
    """Lower-envelope minimum-points curve from the non-ground points inside every labelled object."""
    samples = []
    for frame in frames:
        grid = postprocess_grid(build_ground_grid(frame.cloud, params.ground, params.threads))
        remainder, _ = remove_ground(frame.cloud, grid, params.d_o)
        samples.extend(curve_samples(remainder, frame.objects))
    return fit_min_points_curve(samples, interval, envelope=True)


def with_fitted_curve(params: PipelineParams, frames: Sequence[Frame], interval: float = 0.5) -> PipelineParams:
    """Fill in the minimum-points curve from ground truth when none is configured."""
    if params.filter.curve is not None:
        return params
    try:
        curve = fit_curve(frames, params, interval)
    except FitError as exc:
        logger.warning("minimum-points filter disabled: no curve configured and none fits the ground truth (%s)", exc)
        return params
    logger.info("fitted minimum-points curve n_min(d) = %.3f * exp(-%.5f d)", curve.a, curve.k)
    return replace(params, filter=replace(params.filter, curve=curve))


def warn_if_curve_missing(params: PipelineParams) -> None:
    if params.filtering and params.filter.curve is None:
        logger.warning("minimum-points filter disabled: set filter.curve_a/filter.curve_k (see fit-curve)")


def cluster_cloud(cloud: PointCloud, params: PipelineParams) -> list[Cluster]:
    if len(cloud) == 0:
        return []
    if params.clustering == "distance":
        return cluster_distance(cloud, params.cluster.t_d, params.distance_backend)
    if not cloud.has_rings:
        logger.debug("cloud has no ring indices; recovering %d rings", params.n_rings)
        cloud = recover_rings(cloud, params.n_rings)
    return cluster_scan(cloud, params.cluster, params.threads)


def generate_proposals(cloud: PointCloud, params: PipelineParams, filtering: bool | None = None) -> ProposalResult:
    """Ground removal, clustering and (unless disabled) filtering."""
    timings = StageTimings()
    if params.clustering == "scan" and not cloud.has_rings and len(cloud):
        # recover before ground removal so the ring order is fixed for the whole frame
        cloud = recover_rings(cloud, params.n_rings)

    start = time.perf_counter()
    grid = postprocess_grid(build_ground_grid(cloud, params.ground, params.threads))
    remainder, report = remove_ground(cloud, grid, params.d_o)
    timings.ground = time.perf_counter() - start

    start = time.perf_counter()
    clusters = cluster_cloud(remainder, params)
    proposals = make_proposals(remainder, clusters)
    timings.cluster = time.perf_counter() - start

    start = time.perf_counter()
    apply_filter = params.filtering if filtering is None else filtering
    kept = filter_proposals(proposals, params.filter) if apply_filter else proposals
    timings.filter = time.perf_counter() - start
    return ProposalResult(remainder, proposals, kept, report, timings, grid)


def detect_frame(
    cloud: PointCloud,
    params: PipelineParams,
    model: ClassifierModel | None = None,
    seed: int = 0,
) -> tuple[list[Detection], ProposalResult]:
    result = generate_proposals(cloud, params)
    if model is None or not params.classify:
        return [Detection(p, None) for p in result.kept], result
    start = time.perf_counter()
    predictions = predict(model, [result.cloud.xyz[p.cluster.indices] for p in result.kept], seed=seed)
    result.timings.classify = time.perf_counter() - start
    return [Detection(p, pred) for p, pred in zip(result.kept, predictions)], result


def extract_training_samples(
    frames: Sequence[Frame],
    params: PipelineParams,
    iou_threshold: float = 0.5,
    threads: int = 1,
) -> list[Sample]:
    """Label each proposal with its matched ground-truth class; unmatched proposals are background."""

    def samples_for(frame: Frame) -> list[Sample]:
        result = generate_proposals(frame.cloud, params)
        matches = greedy_match([o.box for o in frame.objects], [p.box for p in result.kept], iou_threshold)
        label_of = {proposal: frame.objects[truth].cls for truth, proposal, _ in matches}
        return [
            Sample(points=result.cloud.xyz[p.cluster.indices].copy(), label=label_of.get(i, ObjectClass.BACKGROUND))
            for i, p in enumerate(result.kept)
        ]

    samples = [s for batch in parallel_map(samples_for, list(frames), threads) for s in batch]
    counts = {cls.name: sum(1 for s in samples if s.label is cls) for cls in ObjectClass}
    logger.info("extracted %d training samples: %s", len(samples), counts)
    return samples
