"""Forward/backward pairs for the layer types the classifier is built from.

Every forward returns its output plus whatever the matching backward needs. Rows are samples
(or points, for the shared per-point layers) and columns are channels.
"""

from __future__ import annotations

import logging

import numpy as np

logger = logging.getLogger(__name__)

PROB_EPS = 1e-12


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w + b


def dense_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx, dw, db)."""
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    momentum: float,
    eps: float,
) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """Normalize over rows; in train mode the running statistics are updated in place."""
    if train:
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean) * inv_std
    return gamma * x_hat + beta, (x_hat, inv_std)


def batchnorm_backward(
    dy: np.ndarray, cache: tuple[np.ndarray, np.ndarray], gamma: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Train-mode gradient through batch statistics; returns (dx, dgamma, dbeta)."""
    x_hat, inv_std = cache
    rows = dy.shape[0]
    dx_hat = dy * gamma
    dx = inv_std / rows * (rows * dx_hat - dx_hat.sum(axis=0) - x_hat * (dx_hat * x_hat).sum(axis=0))
    return dx, (dy * x_hat).sum(axis=0), dy.sum(axis=0)


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dy * (y > 0.0)


def dropout_mask(shape: tuple[int, ...], keep_prob: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted dropout: kept units are scaled by 1/keep_prob so inference needs no rescaling."""
    return (rng.random(shape) < keep_prob) / keep_prob


def maxpool_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Channelwise max over the point axis of (batch, points, channels)."""
    arg = np.argmax(x, axis=1)
    return np.take_along_axis(x, arg[:, None, :], axis=1)[:, 0, :], arg


def maxpool_backward(dy: np.ndarray, arg: np.ndarray, n_points: int) -> np.ndarray:
    dx = np.zeros((dy.shape[0], n_points, dy.shape[1]))
    np.put_along_axis(dx, arg[:, None, :], dy[:, None, :], axis=1)
    return dx


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def nll_loss(probabilities: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-probability of the true class."""
    labels = np.asarray(labels, dtype=np.int64)
    picked = probabilities[np.arange(len(labels)), labels]
    clamped = picked < PROB_EPS
    if clamped.any():
        logger.warning("nll_loss: %d true-class probabilities clamped to %g", int(clamped.sum()), PROB_EPS)
    return float(-np.mean(np.log(np.maximum(picked, PROB_EPS))))


def nll_softmax_backward(probabilities: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of the mean NLL with respect to the logits feeding the softmax."""
    grad = probabilities.copy()
    grad[np.arange(len(labels)), labels] -= 1.0
    return grad / len(labels)
