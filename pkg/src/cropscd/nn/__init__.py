"""Minimal dense-tensor engine with reverse-mode differentiation."""

from . import functional
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradcheckReport, gradcheck
from .modules import BatchNorm2d, Conv2d, ConvBnRelu, Module
from .optim import sgd_step
from .rng import Xoshiro256, kaiming_uniform, stream_seed
from .tensor import (
    NumericalError,
    Parameter,
    Tensor,
    absolute,
    add,
    concat,
    no_grad,
    relu,
    scale,
    sigmoid,
    softmax,
    sub,
)

__all__ = [
    "BatchNorm2d",
    "Conv2d",
    "ConvBnRelu",
    "GradcheckReport",
    "Module",
    "NumericalError",
    "Parameter",
    "Tensor",
    "Xoshiro256",
    "absolute",
    "add",
    "concat",
    "functional",
    "gradcheck",
    "kaiming_uniform",
    "load_checkpoint",
    "no_grad",
    "relu",
    "save_checkpoint",
    "scale",
    "sgd_step",
    "sigmoid",
    "softmax",
    "stream_seed",
    "sub",
]
