"""Bird's-eye-view raster of a frame with its detections."""

from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from lidar_proposals.core import PointCloud  # noqa: E402
from lidar_proposals.pipeline import Detection  # noqa: E402

COLORS = {
    "car": "tab:red",
    "van": "tab:orange",
    "pedestrian": "tab:green",
    "cyclist": "tab:purple",
    "background": "tab:gray",
    "unclassified": "tab:blue",
}


def render_bev(
    path: str | Path,
    cloud: PointCloud,
    detections: Sequence[Detection],
    region: tuple[float, float, float, float] = (0.0, 70.0, -40.0, 40.0),
    dpi: int = 120,
) -> Path:
    """Top-down scatter of the points (x up, y to the left) with one rectangle per detection."""
    x_min, x_max, y_min, y_max = region
    fig, ax = plt.subplots(figsize=(6, 6 * (x_max - x_min) / (y_max - y_min)))
    try:
        if len(cloud):
            ax.scatter(-cloud.xyz[:, 1], cloud.xyz[:, 0], s=0.2, c=cloud.xyz[:, 2], cmap="viridis", linewidths=0)
        for detection in detections:
            box = detection.proposal.box
            color = COLORS.get(detection.label, "black")
            ax.add_patch(
                Rectangle((-box.hi.y, box.lo.x), box.hi.y - box.lo.y, box.hi.x - box.lo.x, fill=False, edgecolor=color, linewidth=0.8)
            )
        ax.set_xlim(-y_max, -y_min)
        ax.set_ylim(x_min, x_max)
        ax.set_aspect("equal")
        ax.set_xlabel("-y (m)")
        ax.set_ylabel("x (m)")
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=dpi, bbox_inches="tight")
    finally:
        plt.close(fig)
    return path
