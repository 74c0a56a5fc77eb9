"""Surrogate and target classifiers, backed by torch autograd in float64."""

from .classifier import (
    ARCHITECTURES,
    DivergenceError,
    PointNetLite,
    TrainConfig,
    accuracy,
    classify,
    input_gradients,
    loss_and_grads,
    load_classifier,
    predict,
    save_classifier,
    train_classifier,
)
from .container import dump_params, load_params, parse_params, save_params

__all__ = [
    "ARCHITECTURES",
    "DivergenceError",
    "PointNetLite",
    "TrainConfig",
    "accuracy",
    "classify",
    "dump_params",
    "input_gradients",
    "load_classifier",
    "load_params",
    "loss_and_grads",
    "parse_params",
    "predict",
    "save_classifier",
    "save_params",
    "train_classifier",
]
