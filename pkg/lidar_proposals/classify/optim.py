"""Adam with a staircase exponential learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from lidar_proposals.classify.network import ClassifierModel
from lidar_proposals.errors import ConfigError

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


@dataclass(frozen=True)
class Schedule:
    learning_rate: float = 0.0002
    decay: float = 0.8
    decay_steps: int = 18570

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be > 0")
        if not 0.0 < self.decay <= 1.0:
            raise ConfigError("decay must lie in (0, 1]")
        if self.decay_steps < 1:
            raise ConfigError("decay_steps must be >= 1")

    def rate(self, step: int) -> float:
        return self.learning_rate * self.decay ** (step // self.decay_steps)


@dataclass
class AdamState:
    step: int = 0
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(model: ClassifierModel, grads: dict[str, np.ndarray], state: AdamState, schedule: Schedule) -> None:
    """Update parameters in place and advance the step counter."""
    rate = schedule.rate(state.step)
    t = state.step + 1
    for name, grad in grads.items():
        m = state.first.setdefault(name, np.zeros_like(grad))
        v = state.second.setdefault(name, np.zeros_like(grad))
        m *= BETA1
        m += (1.0 - BETA1) * grad
        v *= BETA2
        v += (1.0 - BETA2) * grad * grad
        m_hat = m / (1.0 - BETA1**t)
        v_hat = v / (1.0 - BETA2**t)
        model.params[name] -= rate * m_hat / (np.sqrt(v_hat) + EPSILON)
    state.step = t
