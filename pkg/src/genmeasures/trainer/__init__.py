"""Losses, Adam, reverse-mode gradients, the training loop and evaluation metrics."""
from .backprop import backprop, backward, loss_and_grads
from .evaluate import EvalResult, evaluate, metrics_from_predictions
from .loop import (
    DIVERGED,
    MAX_EPOCHS,
    PATIENCE_EXHAUSTED,
    THRESHOLD_MET,
    EpochRecord,
    TrainConfig,
    TrainConfigError,
    TrainingTrace,
    error_rate,
    train,
)
from .losses import combined_loss, cross_entropy, dice_loss
from .optim import AdamState, NonFiniteGradientError, adam_step

__all__ = [
    "AdamState", "DIVERGED", "EpochRecord", "EvalResult", "MAX_EPOCHS", "NonFiniteGradientError",
    "PATIENCE_EXHAUSTED", "THRESHOLD_MET", "TrainConfig", "TrainConfigError", "TrainingTrace",
    "adam_step", "backprop", "backward", "combined_loss", "cross_entropy", "dice_loss", "error_rate",
    "evaluate", "loss_and_grads", "metrics_from_predictions", "train",
]
