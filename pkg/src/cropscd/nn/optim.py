"""SGD with momentum and decoupled-from-nothing classic weight decay."""

from __future__ import annotations

from typing import Iterable

from .tensor import Parameter


class MissingGradient(RuntimeError):
    pass


def sgd_step(
    params: Iterable[Parameter],
    lr: float = 0.001,
    momentum: float = 0.9,
    weight_decay: float = 0.0001,
) -> None:
    """v <- momentum*v + (grad + wd*w); w <- w - lr*v; gradients are cleared."""
    for p in params:
        if p.grad is None:
            raise MissingGradient(f"parameter {p.name or '<unnamed>'} has no gradient")
        update = p.grad + weight_decay * p.data
        p.momentum = momentum * p.momentum + update
        p.data = p.data - lr * p.momentum
        p.grad = None
