"""Lifting network: camera embedding, pose and trajectory heads, training and inference."""

from .data import LiftData, build_lift_data, to_world, window_inputs
from .infer import RFRH_HEIGHT, predict_absolute, predict_dataset, rfrh_dataset, rfrh_localize
from .model import (
    MODES,
    CameraEmbeddingInput,
    LiftingModel,
    ModelInput,
    embed_camera,
    forward,
)
from .train import TrainConfig, Trainer, build_model, evaluate, load_model, log_csv, loss, predict_frame, train

__all__ = [
    "MODES",
    "RFRH_HEIGHT",
    "CameraEmbeddingInput",
    "LiftData",
    "LiftingModel",
    "ModelInput",
    "TrainConfig",
    "Trainer",
    "build_lift_data",
    "build_model",
    "embed_camera",
    "evaluate",
    "forward",
    "load_model",
    "log_csv",
    "loss",
    "predict_absolute",
    "predict_dataset",
    "predict_frame",
    "rfrh_dataset",
    "rfrh_localize",
    "to_world",
    "train",
    "window_inputs",
]
