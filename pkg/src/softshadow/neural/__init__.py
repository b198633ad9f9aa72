"""Positional-encoded MLP that stores a mesh's soft shadows for any light direction."""

from .adam import AdamState, adam_step
from .encoding import EncodingConfig, encode_batch, positional_encode
from .mlp import (
    MlpModel,
    ModelFormatError,
    forward,
    load_model,
    loss_and_grad,
    mlp_forward,
    param_count,
    save_model,
)
from .train import Architecture, TrainConfig, TrainingDiverged, TrainResult, render_texture, train

__all__ = [
    "AdamState", "adam_step", "EncodingConfig", "encode_batch", "positional_encode",
    "MlpModel", "ModelFormatError", "forward", "load_model", "loss_and_grad", "mlp_forward",
    "param_count", "save_model", "Architecture", "TrainConfig", "TrainingDiverged",
    "TrainResult", "render_texture", "train",
]
