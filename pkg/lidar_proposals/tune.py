"""Particle swarm search over the segmentation parameters (H_d, V_d, D_o), maximizing recall."""

from __future__ import annotations

import csv
import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from tqdm import tqdm

from lidar_proposals.config import PipelineParams
from lidar_proposals.core import parallel_map
from lidar_proposals.errors import ConfigError
from lidar_proposals.evaluation import evaluate_recall
from lidar_proposals.pipeline import Frame

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class PsoConfig:
    alpha: float = 0.72
    lam: float = 1.49
    theta: float = 1.49
    particles: int = 50
    generations: int = 1000
    lower: float = 0.0
    upper: float = 1.2
    dimensions: int = 3
    seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        if self.particles < 1 or self.generations < 1 or self.dimensions < 1:
            raise ConfigError("particles, generations and dimensions must be >= 1")
        if not self.lower < self.upper:
            raise ConfigError("search range min must be below max")


@dataclass
class Particle:
    position: np.ndarray
    velocity: np.ndarray
    best_position: np.ndarray
    best_fitness: float
    rng: np.random.Generator


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    best_fitness: float
    best_position: tuple[float, ...]


@dataclass(frozen=True)
class PsoResult:
    best_position: np.ndarray
    best_fitness: float
    history: list[GenerationRecord]


def update_velocity(
    velocity: np.ndarray,
    position: np.ndarray,
    personal_best: np.ndarray,
    global_best: np.ndarray,
    r1: np.ndarray,
    r2: np.ndarray,
    cfg: PsoConfig,
) -> np.ndarray:
    """v <- alpha*v + lam*r1*(g - x) + theta*r2*(p - x)."""
    return cfg.alpha * velocity + cfg.lam * r1 * (global_best - position) + cfg.theta * r2 * (personal_best - position)


def pso_optimize(objective: Objective, cfg: PsoConfig, progress: bool = False) -> PsoResult:
    """Maximize `objective` over [lower, upper]^dimensions.

    Each particle draws from its own stream spawned off the master seed, and all draws happen in
    the sequential update phase, so results do not depend on how evaluations are spread over threads.
    """
    span = cfg.upper - cfg.lower
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(cfg.particles)]
    swarm = []
    for rng in streams:
        position = rng.uniform(cfg.lower, cfg.upper, cfg.dimensions)
        velocity = rng.uniform(-0.1 * span, 0.1 * span, cfg.dimensions)
        swarm.append(Particle(position, velocity, position.copy(), -np.inf, rng))

    global_best = swarm[0].position.copy()
    global_fitness = -np.inf
    history: list[GenerationRecord] = []
    for generation in tqdm(range(cfg.generations), desc="pso", disable=not progress):
        fitness = parallel_map(lambda p: float(objective(p.position.copy())), swarm, cfg.threads)
        for particle, value in zip(swarm, fitness):
            if value > particle.best_fitness:
                particle.best_fitness = value
                particle.best_position = particle.position.copy()
            if value > global_fitness:
                global_fitness = value
                global_best = particle.position.copy()
        history.append(GenerationRecord(generation, global_fitness, tuple(global_best.tolist())))

        for particle in swarm:
            r1 = particle.rng.random(cfg.dimensions)
            r2 = particle.rng.random(cfg.dimensions)
            particle.velocity = update_velocity(
                particle.velocity, particle.position, particle.best_position, global_best, r1, r2, cfg
            )
            particle.position = particle.position + particle.velocity
            if np.any(particle.position < cfg.lower) or np.any(particle.position > cfg.upper):
                particle.position = particle.rng.uniform(cfg.lower, cfg.upper, cfg.dimensions)
                particle.velocity = np.zeros(cfg.dimensions)
        logger.debug("generation %d: best %.6f at %s", generation, global_fitness, np.round(global_best, 4))

    logger.info("pso finished: best %.6f at %s", global_fitness, np.round(global_best, 4).tolist())
    return PsoResult(global_best, float(global_fitness), history)


def recall_objective(
    frames: Sequence[Frame],
    params: PipelineParams,
    iou_threshold: float = 0.25,
    filtering: bool = True,
) -> Objective:
    """Objective over positions [H_d, V_d, D_o]; thresholds of zero score zero recall."""

    def objective(position: np.ndarray) -> float:
        h_d, v_d, d_o = (float(v) for v in position)
        if h_d <= 0.0 or v_d <= 0.0:
            return 0.0
        candidate = params.with_segmentation(h_d=h_d, v_d=v_d, d_o=d_o)
        return evaluate_recall(frames, candidate, iou_threshold, filtering=filtering).recall

    return objective


def write_history_csv(path: str | Path, history: Sequence[GenerationRecord]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["generation", "best_fitness", "best_position"])
        for record in history:
            writer.writerow([record.generation, f"{record.best_fitness:.6f}", " ".join(f"{v:.6f}" for v in record.best_position)])
