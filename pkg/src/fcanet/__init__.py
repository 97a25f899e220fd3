"""Small-footprint noise-robust keyword spotting with verified gradients."""

__version__ = "0.1.0"

from .model import ModelConfig, build_network, count_footprint  # noqa: F401
from .tensor import Tensor, no_grad  # noqa: F401
