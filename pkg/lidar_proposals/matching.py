"""Axis-aligned 3D IoU and one-to-one greedy matching of boxes."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from lidar_proposals.core import Box3D


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Intersection over union of two axis-aligned boxes; 0 when both are degenerate."""
    overlap = np.clip(np.minimum(a.hi, b.hi) - np.maximum(a.lo, b.lo), 0.0, None)
    intersection = float(np.prod(overlap))
    union = a.volume + b.volume - intersection
    return intersection / union if union > 0.0 else 0.0


def iou_matrix(first: Sequence[Box3D], second: Sequence[Box3D]) -> np.ndarray:
    if not first or not second:
        return np.zeros((len(first), len(second)))
    lo_a = np.array([b.lo for b in first])[:, None, :]
    hi_a = np.array([b.hi for b in first])[:, None, :]
    lo_b = np.array([b.lo for b in second])[None, :, :]
    hi_b = np.array([b.hi for b in second])[None, :, :]
    intersection = np.prod(np.clip(np.minimum(hi_a, hi_b) - np.maximum(lo_a, lo_b), 0.0, None), axis=2)
    vol_a = np.prod(hi_a - lo_a, axis=2)
    vol_b = np.prod(hi_b - lo_b, axis=2)
    union = vol_a + vol_b - intersection
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0.0, intersection / union, 0.0)


def greedy_match(truth: Sequence[Box3D], proposals: Sequence[Box3D], threshold: float) -> list[tuple[int, int, float]]:
    """Pairs (truth index, proposal index, IoU) taken in descending IoU order, each side used once."""
    ious = iou_matrix(truth, proposals)
    if ious.size == 0:
        return []
    rows, cols = np.nonzero(ious >= threshold)
    order = np.lexsort((cols, rows, -ious[rows, cols]))
    used_truth: set[int] = set()
    used_proposals: set[int] = set()
    matches = []
    for r, c in zip(rows[order].tolist(), cols[order].tolist()):
        if r in used_truth or c in used_proposals:
            continue
        used_truth.add(r)
        used_proposals.add(c)
        matches.append((r, c, float(ious[r, c])))
    return matches
