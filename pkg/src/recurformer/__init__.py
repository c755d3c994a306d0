"""Transformer with an additional recurrence encoder, built on a small numpy autograd."""

from .config import ConfigError, ContractError, ModelConfig, WiringError
from .model import Seq2Seq
from .tensor import Parameter, ShapeError, Tensor, no_grad

__all__ = ["ConfigError", "ContractError", "ModelConfig", "Parameter", "Seq2Seq", "ShapeError",
           "Tensor", "WiringError", "no_grad"]
__version__ = "0.1.0"
