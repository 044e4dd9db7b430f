"""Video prediction with a ConvGRU encoder-forecaster, dual attention
branches over raw and contrast-reinforced features, and a self-contained
reverse-mode autodiff tensor engine."""

from .tensor import (
    NumericalError,
    ShapeError,
    Tensor,
    concat,
    l2_normalize,
    matmul,
    no_grad,
    softmax,
)
from .model import ABLATION_VARIANTS, ModelConfig, SrvpModel, ablation_config, build_baseline

__all__ = [
    "ABLATION_VARIANTS",
    "ModelConfig",
    "NumericalError",
    "ShapeError",
    "SrvpModel",
    "Tensor",
    "ablation_config",
    "build_baseline",
    "concat",
    "l2_normalize",
    "matmul",
    "no_grad",
    "softmax",
]
