"""RL-CSC: residual learning over a convolutional LISTA network for super-resolution."""
from .model import ModelConfig, RlcscParams, depth, forward, parameter_count, restore_y
from .tensor import Tape, Tensor

__all__ = ["ModelConfig", "RlcscParams", "Tape", "Tensor", "depth", "forward", "parameter_count", "restore_y"]
__version__ = "0.1.0"
