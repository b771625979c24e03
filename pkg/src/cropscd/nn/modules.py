"""Thin layer containers over the functional ops."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .rng import Xoshiro256, kaiming_uniform
from .tensor import Parameter, Tensor


class Module:
    """Parameter/buffer bookkeeping plus a train/eval flag.

    Submodules are discovered from instance attributes (including lists of
    modules), so layers compose without registration boilerplate.
    """

    def __init__(self):
        self.training = True

    def _children(self) -> Iterator["Module"]:
        for value in self.__dict__.values():
            if isinstance(value, Module):
                yield value
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in self.__dict__.items():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{path}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self.__dict__.items():
            path = f"{prefix}{name}"
            if isinstance(value, np.ndarray):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_buffers(f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{path}.{i}.")

    def train(self) -> "Module":
        self.training = True
        for child in self._children():
            child.train()
        return self

    def eval(self) -> "Module":
        self.training = False
        for child in self._children():
            child.eval()
        return self

    def to_float64(self) -> "Module":
        """Promote every parameter to float64 (gradcheck shadow mode)."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(np.float64)
            p.momentum = p.momentum.astype(np.float64)
        return self


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: Xoshiro256,
        stride: int = 1,
        padding: int = 0,
        dilation: int = 1,
        bias: bool = True,
    ):
        super().__init__()
        fan_in = in_channels * kernel_size * kernel_size
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.weight = Parameter(kaiming_uniform(rng, shape, fan_in), name="weight")
        self.bias = Parameter(np.zeros(out_channels, dtype=np.float32), name="bias") if bias else None
        self.stride = stride
        self.padding = padding
        self.dilation = dilation

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(channels, dtype=np.float32), name="gamma")
        self.beta = Parameter(np.zeros(channels, dtype=np.float32), name="beta")
        self.running_mean = np.zeros(channels, dtype=np.float64)
        self.running_var = np.ones(channels, dtype=np.float64)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return F.batchnorm2d(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            self.training,
            self.momentum,
            self.eps,
        )


class ConvBnRelu(Module):
    """3x3 (or custom) conv + batchnorm + ReLU, the workhorse block."""

    def __init__(self, cin, cout, rng, kernel_size=3, stride=1, padding=1, dilation=1):
        super().__init__()
        self.conv = Conv2d(cin, cout, kernel_size, rng, stride, padding, dilation, bias=False)
        self.bn = BatchNorm2d(cout)

    def __call__(self, x: Tensor) -> Tensor:
        from .tensor import relu

        return relu(self.bn(self.conv(x)))
