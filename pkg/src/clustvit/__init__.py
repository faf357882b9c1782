"""Semantic-segmentation ViT with trainable token merging and regeneration."""

from .model import ClustViT
from .optim import LrSchedule, Parameter, sgd_step
from .tensor import Tensor, backward, no_grad
from .train import RunConfig, evaluate, train
from .vit import EncoderConfig, preset_config

__all__ = [
    "ClustViT",
    "EncoderConfig",
    "LrSchedule",
    "Parameter",
    "RunConfig",
    "Tensor",
    "backward",
    "evaluate",
    "no_grad",
    "preset_config",
    "sgd_step",
    "train",
]
