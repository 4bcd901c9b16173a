"""Small feed-forward anomaly-detection backbones trained with manual backprop."""

from aar.nn.model import (
    AUTOENCODER,
    DSVDD,
    Model,
    ModelSpec,
    anomaly_scores,
    huber_scores,
    init_dsvdd_center,
    init_model,
    load_checkpoint,
    loss_and_grad,
    pseudo_huber,
    save_checkpoint,
    score_matrix,
    weighted_grad,
)
from aar.nn.optim import AdamState, adam_step, adam_update
from aar.nn.train import TrainConfig, TrainHistory, train

__all__ = [
    "AUTOENCODER",
    "DSVDD",
    "AdamState",
    "Model",
    "ModelSpec",
    "TrainConfig",
    "TrainHistory",
    "adam_step",
    "adam_update",
    "anomaly_scores",
    "huber_scores",
    "init_dsvdd_center",
    "init_model",
    "load_checkpoint",
    "loss_and_grad",
    "pseudo_huber",
    "save_checkpoint",
    "score_matrix",
    "train",
    "weighted_grad",
]
