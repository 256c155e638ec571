"""Mini-batch training loop with rotation/scale augmentation."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from tqdm import tqdm

from lidar_proposals.classify.network import ClassifierModel, forward, loss_and_gradients, prepare_batch
from lidar_proposals.classify.optim import AdamState, Schedule, adam_step
from lidar_proposals.core import ObjectClass
from lidar_proposals.errors import ConfigError, EmptyInputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.0002
    decay: float = 0.8
    decay_steps: int = 18570
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    augment: bool = True
    train_fraction: float = 0.8
    max_rotation: float = math.pi / 4.0
    scale_range: tuple[float, float] = (0.95, 1.05)

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigError("train_fraction must lie in (0, 1]")
        Schedule(self.learning_rate, self.decay, self.decay_steps)

    @property
    def schedule(self) -> Schedule:
        return Schedule(self.learning_rate, self.decay, self.decay_steps)


@dataclass(frozen=True, eq=False)
class Sample:
    points: np.ndarray
    label: ObjectClass


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    loss: float
    train_accuracy: float
    validation_accuracy: float | None


@dataclass
class TrainingHistory:
    epochs: list[EpochMetrics] = field(default_factory=list)
    steps: int = 0

    def best_accuracy(self) -> float:
        scores = [e.validation_accuracy if e.validation_accuracy is not None else e.train_accuracy for e in self.epochs]
        return max(scores, default=0.0)

    def recent_mean_accuracy(self, window: int = 50) -> float:
        tail = self.epochs[-window:]
        scores = [e.validation_accuracy if e.validation_accuracy is not None else e.train_accuracy for e in tail]
        return float(np.mean(scores)) if scores else 0.0


def augment(
    points: np.ndarray,
    seed: int | np.random.Generator,
    max_rotation: float = math.pi / 4.0,
    scale_range: tuple[float, float] = (0.95, 1.05),
) -> np.ndarray:
    """Rotate about z by a uniform angle, then scale uniformly."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    theta = rng.uniform(-max_rotation, max_rotation)
    scale = rng.uniform(*scale_range)
    return apply_rotation_scale(points, theta, scale)


def apply_rotation_scale(points: np.ndarray, theta: float, scale: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    rotation = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return scale * (np.asarray(points, dtype=np.float64).reshape(-1, 3) @ rotation.T)


def split_samples(samples: Sequence[Sample], fraction: float, rng: np.random.Generator) -> tuple[list[Sample], list[Sample]]:
    order = rng.permutation(len(samples))
    cut = max(1, int(round(fraction * len(samples))))
    return [samples[i] for i in order[:cut]], [samples[i] for i in order[cut:]]


def accuracy(model: ClassifierModel, samples: Sequence[Sample], seed: int = 0, batch_size: int = 64) -> float:
    if not samples:
        return 0.0
    rng = np.random.default_rng(seed)
    batch = prepare_batch([s.points for s in samples], model.config.n_points, rng)
    labels = np.array([int(s.label) for s in samples])
    predicted = np.concatenate([forward(model, batch[i : i + batch_size]).argmax(axis=1) for i in range(0, len(batch), batch_size)])
    return float(np.mean(predicted == labels))


def train(
    model: ClassifierModel,
    samples: Sequence[Sample],
    cfg: TrainingConfig,
    progress: bool = False,
) -> TrainingHistory:
    """Train in place. Sampling, shuffling, augmentation and dropout all draw from one seeded stream."""
    if not samples:
        raise EmptyInputError("training set is empty")
    rng = np.random.default_rng(cfg.seed)
    if cfg.train_fraction < 1.0:
        train_set, validation = split_samples(samples, cfg.train_fraction, rng)
    else:
        train_set, validation = list(samples), []
    labels = np.array([int(s.label) for s in train_set])
    counts = np.bincount(labels, minlength=model.config.n_classes)
    logger.info("training on %d samples (%s), validating on %d", len(train_set), counts.tolist(), len(validation))

    schedule = cfg.schedule
    state = AdamState()
    history = TrainingHistory()
    epochs = tqdm(range(cfg.epochs), desc="train", disable=not progress)
    for epoch in epochs:
        order = rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            chosen = order[start : start + cfg.batch_size]
            batch = prepare_batch([train_set[i].points for i in chosen], model.config.n_points, rng)
            if cfg.augment:
                batch = np.stack([augment(p, rng, cfg.max_rotation, cfg.scale_range) for p in batch])
            loss, grads, _ = loss_and_gradients(model, batch, labels[chosen], rng)
            adam_step(model, grads, state, schedule)
            losses.append(loss)
        metrics = EpochMetrics(
            epoch=epoch,
            loss=float(np.mean(losses)),
            train_accuracy=accuracy(model, train_set, seed=cfg.seed),
            validation_accuracy=accuracy(model, validation, seed=cfg.seed) if validation else None,
        )
        history.epochs.append(metrics)
        logger.debug("epoch %d: loss %.4f train %.3f", epoch, metrics.loss, metrics.train_accuracy)
    history.steps = state.step
    return history
