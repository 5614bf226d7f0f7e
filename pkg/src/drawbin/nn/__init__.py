from .model import Architecture, LayerSpec, Model, backward, build_model, forward, loss, loss_and_gradients
from .optim import AdamState, adam_step
from .serialize import ModelFormatError, load_model, save_model
from .train import TrainConfig, TrainResult, foreground_probability, infer, train

__all__ = [
    "AdamState",
    "Architecture",
    "LayerSpec",
    "Model",
    "ModelFormatError",
    "TrainConfig",
    "TrainResult",
    "adam_step",
    "backward",
    "build_model",
    "foreground_probability",
    "forward",
    "infer",
    "load_model",
    "loss",
    "loss_and_gradients",
    "save_model",
    "train",
]
