"""Dual-attention multimodal fusion networks on a small NumPy autodiff engine."""

from .net import DrifaNet, DrifaNetConfig, mtl_loss, saliency
from .tensor import Tensor

__all__ = ["DrifaNet", "DrifaNetConfig", "Tensor", "mtl_loss", "saliency"]
__version__ = "0.1.0"
