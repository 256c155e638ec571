from __future__ import annotations

import csv

import numpy as np
import pytest

from lidar_proposals.errors import ConfigError
from lidar_proposals.pipeline import Frame
from lidar_proposals.tune import PsoConfig, pso_optimize, recall_objective, update_velocity, write_history_csv


def sphere(position: np.ndarray) -> float:
    return -float(np.sum((position - 0.6) ** 2))


def test_velocity_update_rule():
    cfg = PsoConfig()
    v = update_velocity(
        velocity=np.array([1.0]),
        position=np.array([0.0]),
        personal_best=np.array([1.0]),
        global_best=np.array([2.0]),
        r1=np.array([0.5]),
        r2=np.array([0.5]),
        cfg=cfg,
    )
    assert v[0] == pytest.approx(0.72 + 1.49 * 0.5 * 2.0 + 1.49 * 0.5 * 1.0)


def test_swarm_finds_sphere_optimum():
    result = pso_optimize(sphere, PsoConfig(particles=20, generations=60, seed=1))
    assert np.allclose(result.best_position, 0.6, atol=0.05)
    assert result.best_fitness > -0.01
    assert len(result.history) == 60


def test_full_swarm_converges_within_tolerance():
    cfg = PsoConfig(particles=50, generations=200, seed=5)
    result = pso_optimize(sphere, cfg)
    assert np.all(np.abs(result.best_position - 0.6) <= 1e-2)
    fitness = [record.best_fitness for record in result.history]
    assert fitness == sorted(fitness)
    threaded = pso_optimize(sphere, PsoConfig(particles=50, generations=200, seed=5, threads=4))
    assert np.array_equal(threaded.best_position, result.best_position)


def test_best_fitness_never_decreases():
    result = pso_optimize(sphere, PsoConfig(particles=5, generations=30, seed=2))
    fitness = [record.best_fitness for record in result.history]
    assert fitness == sorted(fitness)
    assert result.history[-1].best_position == tuple(result.best_position.tolist())


def test_positions_stay_in_range():
    seen = []

    def record(position: np.ndarray) -> float:
        seen.append(position)
        return sphere(position)

    pso_optimize(record, PsoConfig(particles=6, generations=20, seed=3))
    assert np.all((np.array(seen) >= 0.0) & (np.array(seen) <= 1.2))


def test_seeded_and_thread_invariant():
    a = pso_optimize(sphere, PsoConfig(particles=8, generations=10, seed=4))
    b = pso_optimize(sphere, PsoConfig(particles=8, generations=10, seed=4, threads=4))
    assert np.array_equal(a.best_position, b.best_position)
    assert a.history == b.history
    c = pso_optimize(sphere, PsoConfig(particles=8, generations=10, seed=5))
    assert not np.array_equal(a.best_position, c.best_position)


def test_config_validation():
    with pytest.raises(ConfigError):
        PsoConfig(particles=0)
    with pytest.raises(ConfigError):
        PsoConfig(lower=1.0, upper=1.0)


def test_recall_objective(car_scene, params):
    objective = recall_objective([Frame("car", car_scene.cloud, car_scene.objects)], params)
    assert objective(np.array([0.0, 0.58, 0.26])) == 0.0
    assert objective(np.array([0.49, 0.0, 0.26])) == 0.0
    assert objective(np.array([0.49, 0.58, 0.26])) == 1.0


def test_history_csv(tmp_path):
    result = pso_optimize(sphere, PsoConfig(particles=3, generations=4, seed=0))
    write_history_csv(tmp_path / "history.csv", result.history)
    with (tmp_path / "history.csv").open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [row["generation"] for row in rows] == ["0", "1", "2", "3"]
    assert len(rows[0]["best_position"].split()) == 3
