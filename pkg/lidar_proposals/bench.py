"""Wall-clock timing of the pipeline stages and of the classifier."""

from __future__ import annotations

import csv
import logging
import time
from collections.abc import Sequence
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from lidar_proposals.classify.network import ClassifierModel, forward
from lidar_proposals.config import PipelineParams
from lidar_proposals.errors import ConfigError, EmptyInputError
from lidar_proposals.pipeline import Frame, detect_frame

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimingReport:
    """Mean seconds per frame for each stage; file I/O is never inside a stage."""

    ground: float
    cluster: float
    filter: float
    classify: float
    total: float
    threads: int
    frames: int
    points_mean: float = 0.0
    proposals_mean: float = 0.0

    @property
    def segmentation(self) -> float:
        """Ground removal folded into clustering, as segmentation timings are usually quoted."""
        return self.ground + self.cluster


def benchmark(
    frames: Sequence[Frame],
    params: PipelineParams,
    model: ClassifierModel | None = None,
    warmup: int = 3,
    threads: int = 1,
) -> TimingReport:
    """Run the first `warmup` frames untimed, then average stage times over the rest."""
    if warmup < 0:
        raise ConfigError("warmup must be >= 0")
    measured = list(frames[warmup:])
    if not measured:
        raise EmptyInputError(f"no frames left to measure after {warmup} warm-up frames")
    params = replace(params, threads=threads)
    for frame in frames[:warmup]:
        detect_frame(frame.cloud, params, model)

    rows = []
    for frame in measured:
        start = time.perf_counter()
        detections, result = detect_frame(frame.cloud, params, model)
        elapsed = time.perf_counter() - start
        t = result.timings
        rows.append((t.ground, t.cluster, t.filter, t.classify, elapsed, len(frame.cloud), len(detections)))
    means = np.mean(np.array(rows, dtype=np.float64), axis=0)
    report = TimingReport(
        ground=float(means[0]),
        cluster=float(means[1]),
        filter=float(means[2]),
        classify=float(means[3]),
        total=float(means[4]),
        threads=threads,
        frames=len(measured),
        points_mean=float(means[5]),
        proposals_mean=float(means[6]),
    )
    logger.info(
        "timing over %d frames (%d thread(s)): ground %.4fs cluster %.4fs filter %.4fs classify %.4fs total %.4fs",
        report.frames, threads, report.ground, report.cluster, report.filter, report.classify, report.total,
    )
    return report


def classifier_timing(
    model: ClassifierModel,
    point_counts: Sequence[int] = (50, 100, 200, 300),
    batch_size: int = 32,
    repeats: int = 5,
    seed: int = 0,
) -> list[tuple[int, float]]:
    """Mean seconds to classify one batch of proposals, for each points-per-proposal count."""
    rng = np.random.default_rng(seed)
    results = []
    for n in point_counts:
        batch = rng.standard_normal((batch_size, n, 3))
        forward(model, batch)
        times = []
        for _ in range(repeats):
            start = time.perf_counter()
            forward(model, batch)
            times.append(time.perf_counter() - start)
        results.append((int(n), float(np.mean(times))))
        logger.debug("classifier: %d points x %d proposals in %.4fs", n, batch_size, results[-1][1])
    return results


def write_timing_csv(path: str | Path, reports: Sequence[tuple[str, TimingReport]]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "threads", "frames", "points_mean", "proposals_mean", "ground_s", "cluster_s", "filter_s", "classify_s", "total_s"])
        for name, r in reports:
            writer.writerow(
                [name, r.threads, r.frames, f"{r.points_mean:.0f}", f"{r.proposals_mean:.1f}"]
                + [f"{v:.6f}" for v in (r.ground, r.cluster, r.filter, r.classify, r.total)]
            )
