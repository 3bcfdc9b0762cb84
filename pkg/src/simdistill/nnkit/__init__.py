"""Minimal float64 autodiff, MLPs and Adam — everything the trainers need."""

from . import tensor
from .net import ACTIVATIONS, CONDITIONINGS, MlpNet
from .optim import Adam
from .tensor import Tape, Tensor, backward

__all__ = [
    "ACTIVATIONS",
    "Adam",
    "CONDITIONINGS",
    "MlpNet",
    "Tape",
    "Tensor",
    "backward",
    "tensor",
]
