from __future__ import annotations

import logging
from pathlib import Path

from fastmcp import FastMCP

from lidar_proposals.classify import ClassifierModel, load_model
from lidar_proposals.config import PipelineParams, load_params, to_flat
from lidar_proposals.errors import ProposalError
from lidar_proposals.evaluation import evaluate_recall
from lidar_proposals.ingest import load_velodyne
from lidar_proposals.pipeline import detect_frame, synthetic_frames, with_fitted_curve
from lidar_proposals.scene import random_scene_spec

logger = logging.getLogger(__name__)

mcp = FastMCP(
    "lidar-proposals",
    instructions="LiDAR object proposals and classification for velodyne .bin scans. Call help() to get started.",
)

_models: dict[Path, tuple[float, ClassifierModel]] = {}


def _params(overrides: list[str] | None) -> PipelineParams:
    return load_params(None, overrides or [])


def _model(path: Path) -> ClassifierModel:
    """Load a model once per file modification time."""
    mtime = path.stat().st_mtime
    cached = _models.get(path)
    if cached is None or cached[0] != mtime:
        _models[path] = (mtime, load_model(path))
        logger.info("loaded classifier from %s", path)
    return _models[path][1]


@mcp.tool()
def help() -> str:
    """Overview of the available tools."""
    return """# LiDAR proposals

| Tool | Purpose | Example |
|------|---------|---------|
| `help()` | This overview | - |
| `describe_config(overrides)` | Effective parameters | `describe_config(["cluster.h_d=0.4"])` |
| `detect_file(path, classify, overrides)` | Proposals for one velodyne scan | `detect_file("000001.bin", classify=False)` |
| `evaluate_synthetic(frames, seed, iou)` | Proposal recall on generated scenes | `evaluate_synthetic(3)` |

Overrides are dotted `key=value` strings, the same as `--set` on the command line."""


@mcp.tool()
def describe_config(overrides: list[str] | None = None) -> str:
    """Show every pipeline parameter after applying overrides.

    Args:
        overrides: Dotted key=value strings (e.g. ["d_o=0.3", "clustering=distance"])
    """
    try:
        flat = to_flat(_params(overrides))
    except ProposalError as exc:
        return f"Invalid configuration: {exc}"
    return "\n".join(f"- `{key}`: {value}" for key, value in flat.items())


@mcp.tool()
def detect_file(path: str, classify: bool = True, overrides: list[str] | None = None) -> str:
    """Run the pipeline on one velodyne .bin file and list the detections.

    Args:
        path: Path to a KITTI velodyne scan
        classify: Label proposals with the trained classifier (needs a model file)
        overrides: Dotted key=value parameter overrides
    """
    target = Path(path)
    if not target.is_file():
        return f"File not found: {path}"
    try:
        params = _params(overrides)
        model_path = params.resolved_model_path()
        model = None
        if classify and params.classify:
            if not model_path.is_file():
                return f"No classifier model at {model_path}; train one or call with classify=False."
            model = _model(model_path)
        detections, result = detect_frame(load_velodyne(target), params, model)
    except (ProposalError, OSError) as exc:
        return f"Detection failed: {exc}"

    t = result.timings
    lines = [
        f"# {target.name}: {len(detections)} detection(s) from {len(result.proposals)} proposal(s)",
        f"ground removed {result.ground.removed}/{result.ground.total} points; "
        f"ground {t.ground:.3f}s, cluster {t.cluster:.3f}s, filter {t.filter:.3f}s, classify {t.classify:.3f}s",
    ]
    if params.filtering and params.filter.curve is None:
        lines.append("minimum-points filter off: no `filter.curve_a`/`filter.curve_k` configured")
    lines += [
        "",
        "| # | class | p | center (x, y, z) | size (l, w, h) | points | occluded |",
        "|---|-------|---|------------------|----------------|--------|----------|",
    ]
    for i, d in enumerate(detections):
        c, e = d.proposal.box.center, d.proposal.box.extent
        p = f"{d.prediction.probability:.2f}" if d.prediction else "-"
        lines.append(
            f"| {i} | {d.label} | {p} | {c.x:.2f}, {c.y:.2f}, {c.z:.2f} | {e[0]:.2f}, {e[1]:.2f}, {e[2]:.2f} "
            f"| {d.proposal.point_count} | {'yes' if d.proposal.occluded else 'no'} |"
        )
    return "\n".join(lines)


@mcp.tool()
def evaluate_synthetic(frames: int = 3, seed: int = 0, iou: float = 0.25, overrides: list[str] | None = None) -> str:
    """Generate labelled synthetic scenes and report proposal recall.

    Args:
        frames: Number of scenes (1-50)
        seed: Seed for scene layout and sensor noise
        iou: IoU threshold for a proposal to count as a hit
        overrides: Dotted key=value parameter overrides
    """
    if not 1 <= frames <= 50:
        return "frames must lie in 1..50"
    try:
        data = synthetic_frames([random_scene_spec(seed + i) for i in range(frames)], seed=seed)
        params = with_fitted_curve(_params(overrides), data)
        before = evaluate_recall(data, params, iou, filtering=False)
        after = evaluate_recall(data, params, iou, filtering=True)
    except ProposalError as exc:
        return f"Evaluation failed: {exc}"
    return (
        f"# Recall on {frames} synthetic frame(s), IoU {iou}\n\n"
        f"- before filtering: {before.recall:.3f} ({before.tp}/{before.tp + before.fn}), "
        f"{before.proposal_count_mean:.1f} proposals/frame\n"
        f"- after filtering: {after.recall:.3f} ({after.tp}/{after.tp + after.fn}), "
        f"{after.proposal_count_mean:.1f} proposals/frame"
    )
