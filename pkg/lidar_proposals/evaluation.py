"""Proposal recall and classifier metrics."""

from __future__ import annotations

import csv
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.metrics import auc, precision_recall_curve, roc_curve
from tqdm import tqdm

from lidar_proposals.classify import ClassifierConfig, ClassifierModel, Sample, TrainingConfig, predict, train
from lidar_proposals.classify.training import split_samples
from lidar_proposals.config import PipelineParams
from lidar_proposals.core import ObjectClass, parallel_map
from lidar_proposals.errors import ConfigError, EmptyInputError
from lidar_proposals.matching import greedy_match, iou_3d
from lidar_proposals.pipeline import Frame, generate_proposals

logger = logging.getLogger(__name__)

__all__ = [
    "ClassificationMetrics",
    "FrameRecall",
    "RecallReport",
    "SweepRow",
    "classification_metrics",
    "evaluate_recall",
    "iou_3d",
    "recall_table",
    "training_sweep",
    "write_curves_csv",
    "write_recall_csv",
    "write_sweep_csv",
]


@dataclass(frozen=True)
class FrameRecall:
    frame_id: str
    tp: int
    fn: int
    proposals: int


@dataclass(frozen=True)
class RecallReport:
    tp: int
    fn: int
    proposal_count_mean: float
    frames: tuple[FrameRecall, ...] = ()

    @property
    def recall(self) -> float:
        total = self.tp + self.fn
        return self.tp / total if total else 0.0


def _frame_recall(frame: Frame, params: PipelineParams, iou_threshold: float, filtering: bool | None, classes: frozenset[ObjectClass]) -> FrameRecall:
    truth = [o.box for o in frame.objects if o.cls in classes]
    result = generate_proposals(frame.cloud, params, filtering=filtering)
    matches = greedy_match(truth, [p.box for p in result.kept], iou_threshold)
    return FrameRecall(frame.frame_id, tp=len(matches), fn=len(truth) - len(matches), proposals=len(result.kept))


def evaluate_recall(
    frames: Sequence[Frame],
    params: PipelineParams,
    iou_threshold: float = 0.25,
    filtering: bool | None = None,
    classes: Iterable[ObjectClass] = ObjectClass.objects(),
    threads: int = 1,
    progress: bool = False,
) -> RecallReport:
    """TP/(TP+FN) over ground-truth objects of `classes`; proposal count averaged over frames."""
    wanted = frozenset(classes)
    if not any(o.cls in wanted for frame in frames for o in frame.objects):
        raise EmptyInputError("no ground-truth objects to evaluate against")
    frame_list = list(tqdm(frames, desc="recall", disable=not progress))
    per_frame = parallel_map(lambda f: _frame_recall(f, params, iou_threshold, filtering, wanted), frame_list, threads)
    report = RecallReport(
        tp=sum(f.tp for f in per_frame),
        fn=sum(f.fn for f in per_frame),
        proposal_count_mean=float(np.mean([f.proposals for f in per_frame])),
        frames=tuple(per_frame),
    )
    logger.debug("recall %.4f (%d/%d), %.1f proposals per frame", report.recall, report.tp, report.tp + report.fn, report.proposal_count_mean)
    return report


def recall_table(
    frames: Sequence[Frame], params: PipelineParams, iou_threshold: float = 0.25, threads: int = 1
) -> list[tuple[str, RecallReport]]:
    """Recall for {scan, distance} clustering, each with and without filtering."""
    rows = []
    for clustering in ("scan", "distance"):
        variant = replace(params, clustering=clustering)
        for filtering in (False, True):
            name = f"{clustering}{'+filter' if filtering else ''}"
            rows.append((name, evaluate_recall(frames, variant, iou_threshold, filtering=filtering, threads=threads)))
    return rows


@dataclass
class ClassificationMetrics:
    accuracy: float
    roc: dict[ObjectClass, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    prc: dict[ObjectClass, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    average_precision: dict[ObjectClass, float] = field(default_factory=dict)
    roc_auc: dict[ObjectClass, float] = field(default_factory=dict)
    excluded: list[ObjectClass] = field(default_factory=list)

    @property
    def mean_average_precision(self) -> float:
        scores = [v for k, v in self.average_precision.items() if k is not ObjectClass.BACKGROUND]
        return float(np.mean(scores)) if scores else float("nan")


def classification_metrics(probabilities: np.ndarray, labels: Sequence[int] | np.ndarray) -> ClassificationMetrics:
    """Accuracy plus one-vs-rest ROC and precision-recall curves per class.

    AP is the trapezoid area under the precision-recall points; mAP averages the object classes.
    Classes absent from `labels` have no curves and are listed in `excluded`.
    """
    probabilities = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise EmptyInputError("no predictions to score")
    metrics = ClassificationMetrics(accuracy=float(np.mean(probabilities.argmax(axis=1) == labels)))
    for cls in ObjectClass:
        truth = labels == int(cls)
        if not truth.any() or truth.all():
            metrics.excluded.append(cls)
            continue
        scores = probabilities[:, int(cls)]
        fpr, tpr, _ = roc_curve(truth, scores)
        precision, recall, _ = precision_recall_curve(truth, scores)
        metrics.roc[cls] = (fpr, tpr)
        metrics.prc[cls] = (precision, recall)
        metrics.roc_auc[cls] = float(auc(fpr, tpr))
        metrics.average_precision[cls] = float(auc(recall, precision))
    if metrics.excluded:
        logger.warning("classes without positives or negatives excluded from AP: %s", [c.name for c in metrics.excluded])
    return metrics


def write_recall_csv(path: str | Path, rows: Sequence[tuple[str, RecallReport]]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "tp", "fn", "recall", "proposals_mean"])
        for name, report in rows:
            writer.writerow([name, report.tp, report.fn, f"{report.recall:.6f}", f"{report.proposal_count_mean:.2f}"])


def write_curves_csv(path: str | Path, metrics: ClassificationMetrics) -> None:
    """Long format: class, curve, x, y."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "curve", "x", "y"])
        for cls, (fpr, tpr) in metrics.roc.items():
            writer.writerows([cls.name.lower(), "roc", f"{x:.6f}", f"{y:.6f}"] for x, y in zip(fpr, tpr))
        for cls, (precision, recall) in metrics.prc.items():
            writer.writerows([cls.name.lower(), "prc", f"{x:.6f}", f"{y:.6f}"] for x, y in zip(recall, precision))


@dataclass(frozen=True)
class SweepRow:
    parameter: str
    value: float
    best_accuracy: float
    recent_accuracy: float
    mean_average_precision: float


def _sweep_run(
    samples: Sequence[Sample], classifier: ClassifierConfig, cfg: TrainingConfig, parameter: str, value: float, window: int
) -> SweepRow:
    model = ClassifierModel.initialize(classifier, seed=cfg.seed)
    history = train(model, samples, cfg)
    # train() draws its split first from a fresh stream on the same seed
    held_out: Sequence[Sample] = samples
    if cfg.train_fraction < 1.0:
        _, held_out = split_samples(samples, cfg.train_fraction, np.random.default_rng(cfg.seed))
        held_out = held_out or samples
    predictions = predict(model, [s.points for s in held_out], seed=cfg.seed)
    metrics = classification_metrics(np.array([p.probabilities for p in predictions]), [int(s.label) for s in held_out])
    row = SweepRow(parameter, float(value), history.best_accuracy(), history.recent_mean_accuracy(window), metrics.mean_average_precision)
    logger.info("%s=%g: best accuracy %.4f, recent %.4f, mAP %.4f", parameter, value, row.best_accuracy, row.recent_accuracy, row.mean_average_precision)
    return row


def training_sweep(
    samples: Sequence[Sample],
    classifier: ClassifierConfig,
    cfg: TrainingConfig,
    n_points: Sequence[int] = (),
    train_fractions: Sequence[float] = (),
    window: int = 50,
) -> list[SweepRow]:
    """Train a fresh model per points-per-proposal count, then per train/validation split.

    Accuracy comes from the training history; mAP is scored on the held-out part, or on the
    whole set when nothing is held out.
    """
    if not n_points and not train_fractions:
        raise ConfigError("nothing to sweep: give point counts or train fractions")
    if not samples:
        raise EmptyInputError("training set is empty")
    rows = [_sweep_run(samples, replace(classifier, n_points=int(n)), cfg, "n_points", n, window) for n in n_points]
    rows += [
        _sweep_run(samples, classifier, replace(cfg, train_fraction=float(f)), "train_fraction", f, window)
        for f in train_fractions
    ]
    return rows


def write_sweep_csv(path: str | Path, rows: Sequence[SweepRow]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter", "value", "best_accuracy", "recent_accuracy", "mean_average_precision"])
        for r in rows:
            writer.writerow(
                [r.parameter, f"{r.value:g}", f"{r.best_accuracy:.4f}", f"{r.recent_accuracy:.4f}", f"{r.mean_average_precision:.4f}"]
            )
