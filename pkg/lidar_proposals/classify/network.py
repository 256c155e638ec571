"""Point-set classifier: input transform, shared per-point layers, max-pool and a dense head."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from lidar_proposals.classify import layers
from lidar_proposals.core import ObjectClass, sample_points
from lidar_proposals.errors import ConfigError, EmptyInputError, NumericalError

logger = logging.getLogger(__name__)

Mode = Literal["train", "infer"]


@dataclass(frozen=True)
class ClassifierConfig:
    n_points: int = 100
    point_widths: tuple[int, ...] = (64, 128, 1024)
    head_widths: tuple[int, ...] = (512, 256)
    tnet_point_widths: tuple[int, ...] = (64, 128, 1024)
    tnet_head_widths: tuple[int, ...] = (512, 256)
    n_classes: int = 5
    keep_prob: float = 0.7
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def __post_init__(self) -> None:
        widths = (*self.point_widths, *self.head_widths, *self.tnet_point_widths, *self.tnet_head_widths)
        if self.n_points < 1 or self.n_classes < 2 or min(widths, default=1) < 1:
            raise ConfigError("classifier sizes must be positive")
        if not self.point_widths or not self.tnet_point_widths:
            raise ConfigError("per-point layer widths must not be empty")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ConfigError("keep_prob must lie in (0, 1]")
        object.__setattr__(self, "point_widths", tuple(int(w) for w in self.point_widths))
        object.__setattr__(self, "head_widths", tuple(int(w) for w in self.head_widths))
        object.__setattr__(self, "tnet_point_widths", tuple(int(w) for w in self.tnet_point_widths))
        object.__setattr__(self, "tnet_head_widths", tuple(int(w) for w in self.tnet_head_widths))


@dataclass
class ClassifierModel:
    """Trainable parameters plus batch-norm running statistics, keyed by layer name."""

    config: ClassifierConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def initialize(cls, config: ClassifierConfig, seed: int = 0) -> ClassifierModel:
        rng = np.random.default_rng(seed)
        model = cls(config)
        for name, fan_in, fan_out, normed in _layer_plan(config):
            model.params[f"{name}.w"] = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
            model.params[f"{name}.b"] = np.zeros(fan_out)
            if normed:
                model.params[f"{name}.gamma"] = np.ones(fan_out)
                model.params[f"{name}.beta"] = np.zeros(fan_out)
                model.buffers[f"{name}.mean"] = np.zeros(fan_out)
                model.buffers[f"{name}.var"] = np.ones(fan_out)
        # the transform starts as the identity
        model.params["tnet.out.w"][:] = 0.0
        model.params["tnet.out.b"][:] = np.eye(3).reshape(-1)
        return model

    def copy(self) -> ClassifierModel:
        return ClassifierModel(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )


def _layer_plan(config: ClassifierConfig) -> list[tuple[str, int, int, bool]]:
    """(name, fan_in, fan_out, batch-normed) in forward order."""
    plan = []
    width = 3
    for i, w in enumerate(config.tnet_point_widths):
        plan.append((f"tnet.point{i}", width, w, True))
        width = w
    for i, w in enumerate(config.tnet_head_widths):
        plan.append((f"tnet.head{i}", width, w, True))
        width = w
    plan.append(("tnet.out", width, 9, False))
    width = 3
    for i, w in enumerate(config.point_widths):
        plan.append((f"point{i}", width, w, True))
        width = w
    for i, w in enumerate(config.head_widths):
        plan.append((f"head{i}", width, w, True))
        width = w
    plan.append(("out", width, config.n_classes, False))
    return plan


def normalize_proposal(points: np.ndarray) -> np.ndarray:
    """Center on the centroid and scale the farthest point to unit distance."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise EmptyInputError("cannot normalize an empty proposal")
    centered = points - points.mean(axis=0)
    radius = np.linalg.norm(centered, axis=1).max()
    if radius == 0.0:
        return np.zeros_like(centered)
    return centered / radius


class _Pass:
    """Activations of one forward pass, consumed by `backward`."""

    def __init__(self, batch: np.ndarray, train: bool) -> None:
        self.batch = batch
        self.train = train
        self.inputs: dict[str, np.ndarray] = {}
        self.norms: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.outputs: dict[str, np.ndarray] = {}
        self.masks: dict[str, np.ndarray] = {}
        self.pool_args: dict[str, np.ndarray] = {}
        self.transform: np.ndarray | None = None
        self.probabilities: np.ndarray | None = None


def _block(model: ClassifierModel, name: str, x: np.ndarray, state: _Pass) -> np.ndarray:
    """Dense, batch norm, rectifier."""
    p, cfg = model.params, model.config
    state.inputs[name] = x
    h = layers.dense_forward(x, p[f"{name}.w"], p[f"{name}.b"])
    h, state.norms[name] = layers.batchnorm_forward(
        h,
        p[f"{name}.gamma"],
        p[f"{name}.beta"],
        model.buffers[f"{name}.mean"],
        model.buffers[f"{name}.var"],
        state.train,
        cfg.bn_momentum,
        cfg.bn_eps,
    )
    out = layers.relu_forward(h)
    state.outputs[name] = out
    return out


def _block_backward(model: ClassifierModel, name: str, dy: np.ndarray, state: _Pass, grads: dict[str, np.ndarray]) -> np.ndarray:
    p = model.params
    dh = layers.relu_backward(dy, state.outputs[name])
    dh, grads[f"{name}.gamma"], grads[f"{name}.beta"] = layers.batchnorm_backward(dh, state.norms[name], p[f"{name}.gamma"])
    dx, grads[f"{name}.w"], grads[f"{name}.b"] = layers.dense_backward(dh, state.inputs[name], p[f"{name}.w"])
    return dx


def _encode(model: ClassifierModel, prefix: str, points: np.ndarray, widths: Sequence[int], state: _Pass) -> np.ndarray:
    """Shared per-point blocks followed by a channelwise max over points."""
    batch, n, _ = points.shape
    h = points.reshape(batch * n, 3)
    for i in range(len(widths)):
        h = _block(model, f"{prefix}point{i}", h, state)
    pooled, state.pool_args[prefix] = layers.maxpool_forward(h.reshape(batch, n, -1))
    return pooled


def _encode_backward(
    model: ClassifierModel, prefix: str, dpooled: np.ndarray, widths: Sequence[int], state: _Pass, grads: dict[str, np.ndarray]
) -> np.ndarray:
    batch, n, _ = state.batch.shape
    dh = layers.maxpool_backward(dpooled, state.pool_args[prefix], n).reshape(batch * n, -1)
    for i in reversed(range(len(widths))):
        dh = _block_backward(model, f"{prefix}point{i}", dh, state, grads)
    return dh.reshape(batch, n, 3)


def _run(model: ClassifierModel, batch: np.ndarray, mode: Mode, rng: np.random.Generator | None) -> _Pass:
    cfg = model.config
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3 or batch.shape[2] != 3:
        raise ConfigError(f"expected a (batch, points, 3) array, got shape {batch.shape}")
    train = mode == "train"
    if train and rng is None:
        rng = np.random.default_rng()
    state = _Pass(batch, train)
    p = model.params

    g = _encode(model, "tnet.", batch, cfg.tnet_point_widths, state)
    for i in range(len(cfg.tnet_head_widths)):
        g = _block(model, f"tnet.head{i}", g, state)
    state.inputs["tnet.out"] = g
    state.transform = layers.dense_forward(g, p["tnet.out.w"], p["tnet.out.b"]).reshape(-1, 3, 3)
    aligned = np.einsum("bnj,bjk->bnk", batch, state.transform)
    state.inputs["aligned"] = aligned

    h = _encode(model, "", aligned, cfg.point_widths, state)
    for i in range(len(cfg.head_widths)):
        h = _block(model, f"head{i}", h, state)
        if train and cfg.keep_prob < 1.0:
            mask = layers.dropout_mask(h.shape, cfg.keep_prob, rng)
            state.masks[f"head{i}"] = mask
            h = h * mask
    state.inputs["out"] = h
    logits = layers.dense_forward(h, p["out.w"], p["out.b"])
    probabilities = layers.softmax(logits)
    if not np.all(np.isfinite(probabilities)):
        raise NumericalError("non-finite activations in classifier forward pass")
    state.probabilities = probabilities
    return state


def tnet_forward(model: ClassifierModel, batch: np.ndarray) -> np.ndarray:
    """Input transforms (batch, 3, 3) in inference mode."""
    state = _Pass(np.asarray(batch, dtype=np.float64), train=False)
    cfg, p = model.config, model.params
    g = _encode(model, "tnet.", state.batch, cfg.tnet_point_widths, state)
    for i in range(len(cfg.tnet_head_widths)):
        g = _block(model, f"tnet.head{i}", g, state)
    return layers.dense_forward(g, p["tnet.out.w"], p["tnet.out.b"]).reshape(-1, 3, 3)


def forward(model: ClassifierModel, batch: np.ndarray, mode: Mode = "infer", rng: np.random.Generator | None = None) -> np.ndarray:
    """Class probabilities (batch, n_classes). Train mode uses batch statistics and dropout."""
    return _run(model, batch, mode, rng).probabilities


def backward(model: ClassifierModel, state: _Pass, labels: np.ndarray) -> dict[str, np.ndarray]:
    cfg, p = model.config, model.params
    grads: dict[str, np.ndarray] = {}
    dlogits = layers.nll_softmax_backward(state.probabilities, np.asarray(labels, dtype=np.int64))
    dh, grads["out.w"], grads["out.b"] = layers.dense_backward(dlogits, state.inputs["out"], p["out.w"])
    for i in reversed(range(len(cfg.head_widths))):
        if f"head{i}" in state.masks:
            dh = dh * state.masks[f"head{i}"]
        dh = _block_backward(model, f"head{i}", dh, state, grads)
    daligned = _encode_backward(model, "", dh, cfg.point_widths, state, grads)

    dtransform = np.einsum("bnj,bnk->bjk", state.batch, daligned).reshape(-1, 9)
    dg, grads["tnet.out.w"], grads["tnet.out.b"] = layers.dense_backward(dtransform, state.inputs["tnet.out"], p["tnet.out.w"])
    for i in reversed(range(len(cfg.tnet_head_widths))):
        dg = _block_backward(model, f"tnet.head{i}", dg, state, grads)
    _encode_backward(model, "tnet.", dg, cfg.tnet_point_widths, state, grads)
    return grads


def loss_and_gradients(
    model: ClassifierModel, batch: np.ndarray, labels: np.ndarray, rng: np.random.Generator | None = None
) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Train-mode forward and backward; returns (loss, gradients, probabilities)."""
    state = _run(model, batch, "train", rng)
    loss = layers.nll_loss(state.probabilities, labels)
    return loss, backward(model, state, labels), state.probabilities


@dataclass(frozen=True)
class Prediction:
    cls: ObjectClass
    probability: float
    probabilities: tuple[float, ...]


def prepare_batch(proposals: Sequence[np.ndarray], n_points: int, rng: np.random.Generator) -> np.ndarray:
    return np.stack([normalize_proposal(sample_points(points, n_points, rng)) for points in proposals])


def predict(model: ClassifierModel, proposals: Sequence[np.ndarray], seed: int = 0, batch_size: int = 32) -> list[Prediction]:
    """Argmax class per proposal; point sampling is seeded so repeated calls agree."""
    if not proposals:
        return []
    rng = np.random.default_rng(seed)
    batch = prepare_batch(proposals, model.config.n_points, rng)
    rows = [forward(model, batch[i : i + batch_size]) for i in range(0, len(batch), batch_size)]
    probabilities = np.concatenate(rows)
    return [
        Prediction(ObjectClass(int(np.argmax(row))), float(row.max()), tuple(float(v) for v in row))
        for row in probabilities
    ]
