"""Dataset condensation by dual-view distribution alignment.

Learns a small synthetic training set by matching class-wise feature
distributions under interpolated encoders, calibrates it with expert
classifiers, and evaluates it by retraining networks from scratch.
"""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, record
from .networks import ConvNetSpec, ParamSet, build_convnet

__all__ = [
    "Tensor",
    "backward",
    "record",
    "ConvNetSpec",
    "ParamSet",
    "build_convnet",
    "__version__",
]
