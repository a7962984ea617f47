"""Minimal reverse-mode autodiff and the sequence model zoo."""

from .autodiff import ShapeMismatchError, Tensor
from .architectures import ModelSpec, build, predict_proba
from .training import DivergedError, TrainOpts, train_net

__all__ = [
    "DivergedError",
    "ModelSpec",
    "ShapeMismatchError",
    "Tensor",
    "TrainOpts",
    "build",
    "predict_proba",
    "train_net",
]
