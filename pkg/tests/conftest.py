from __future__ import annotations

import numpy as np
import pytest

from lidar_proposals.classify import ClassifierConfig, ClassifierModel, Sample
from lidar_proposals.config import PipelineParams
from lidar_proposals.core import ObjectClass
from lidar_proposals.scene import LidarModel, ObjectPrimitive, SceneSpec, flat_terrain, generate_scene

REGION = (0.0, 70.0, -40.0, 40.0)


def car(x: float, y: float) -> ObjectPrimitive:
    return ObjectPrimitive(ObjectClass.CAR, "box", x, y, 4.2, 1.8, 1.45, clearance=0.3)


def pedestrian(x: float, y: float) -> ObjectPrimitive:
    return ObjectPrimitive(ObjectClass.PEDESTRIAN, "cylinder", x, y, 0.6, 0.6, 1.75)


def scene_spec(*objects: ObjectPrimitive, spurious: int = 0, lidar: LidarModel | None = None) -> SceneSpec:
    return SceneSpec(
        region=REGION,
        terrain=(flat_terrain(REGION),),
        objects=tuple(objects),
        lidar=lidar or LidarModel(),
        spurious_returns=spurious,
    )


@pytest.fixture(scope="session")
def car_scene():
    """One car off to the side, so its front and near side are both visible."""
    return generate_scene(scene_spec(car(15.0, 6.0)), seed=3)


@pytest.fixture(scope="session")
def street_scene():
    return generate_scene(
        scene_spec(car(15.0, 6.0), car(25.0, -8.0), pedestrian(10.0, -1.0), spurious=150),
        seed=11,
    )


@pytest.fixture
def params() -> PipelineParams:
    return PipelineParams(classify=False)


@pytest.fixture(scope="session")
def tiny_config() -> ClassifierConfig:
    return ClassifierConfig(
        n_points=16,
        point_widths=(8, 16),
        head_widths=(16,),
        tnet_point_widths=(8,),
        tnet_head_widths=(8,),
        keep_prob=1.0,
    )


@pytest.fixture
def tiny_model(tiny_config) -> ClassifierModel:
    return ClassifierModel.initialize(tiny_config, seed=0)


def _box_surface(rng: np.random.Generator, n: int, size: tuple[float, float, float]) -> np.ndarray:
    points = rng.uniform(0.0, 1.0, (n, 3)) * np.asarray(size)
    axis = rng.integers(0, 3, n)
    side = rng.integers(0, 2, n)
    points[np.arange(n), axis] = side * np.asarray(size)[axis]
    return points


def shape_samples(per_class: int, seed: int = 0, n: int = 60) -> list[Sample]:
    """Five visually distinct point shapes, one per class."""
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(per_class):
        flat = np.column_stack([rng.uniform(0, 2.0, n), rng.uniform(0, 2.0, n), rng.normal(0, 0.01, n)])
        samples.append(Sample(flat, ObjectClass.BACKGROUND))
        samples.append(Sample(_box_surface(rng, n, (4.0, 1.8, 1.4)), ObjectClass.CAR))
        angle = rng.uniform(0, 2 * np.pi, n)
        pole = np.column_stack([0.3 * np.cos(angle), 0.3 * np.sin(angle), rng.uniform(0, 1.8, n)])
        samples.append(Sample(pole, ObjectClass.PEDESTRIAN))
        samples.append(Sample(_box_surface(rng, n, (2.0, 2.0, 2.0)), ObjectClass.VAN))
        bar = np.column_stack([rng.uniform(0, 1.8, n // 2), rng.normal(0, 0.02, n // 2), rng.uniform(0.3, 0.4, n // 2)])
        upright = np.column_stack([rng.uniform(0, 0.3, n - n // 2), rng.normal(0, 0.02, n - n // 2), rng.uniform(0.4, 1.7, n - n // 2)])
        samples.append(Sample(np.vstack([bar, upright]), ObjectClass.CYCLIST))
    return samples
