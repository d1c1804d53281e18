"""Covariance-gated real-time segmentation with a from-scratch autodiff
engine, training loop and evaluation tooling."""

from .tensor import Tensor, backward
from .network import MCFNet, ModelConfig

__all__ = ["Tensor", "backward", "MCFNet", "ModelConfig"]
__version__ = "0.1.0"
