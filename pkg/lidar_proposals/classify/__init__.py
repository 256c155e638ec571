from lidar_proposals.classify.network import (
    ClassifierConfig,
    ClassifierModel,
    Prediction,
    backward,
    forward,
    loss_and_gradients,
    normalize_proposal,
    predict,
    tnet_forward,
)
from lidar_proposals.classify.layers import nll_loss
from lidar_proposals.classify.optim import AdamState, Schedule, adam_step
from lidar_proposals.classify.storage import load_model, load_samples, save_model, save_samples
from lidar_proposals.classify.training import Sample, TrainingConfig, TrainingHistory, augment, train

__all__ = [
    "AdamState",
    "ClassifierConfig",
    "ClassifierModel",
    "Prediction",
    "Sample",
    "Schedule",
    "TrainingConfig",
    "TrainingHistory",
    "adam_step",
    "augment",
    "backward",
    "forward",
    "load_model",
    "load_samples",
    "loss_and_gradients",
    "nll_loss",
    "normalize_proposal",
    "predict",
    "save_model",
    "save_samples",
    "tnet_forward",
    "train",
]
