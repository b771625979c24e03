"""Finite-difference validation of analytic gradients.

Runs the operation twice per perturbed element (central differences) in
float64 and compares against one reverse-mode pass seeded with a fixed
random projection. The projection turns arbitrary-shaped outputs into a
scalar functional without needing reduction ops on the tape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradcheckReport:
    max_rel_error: float
    tol: float
    per_input: list[float]

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def gradcheck(
    op: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    eps: float = 1e-5,
    tol: float = 1e-4,
    seed: int = 0,
) -> GradcheckReport:
    """Compare analytic and central-difference gradients of op at inputs.

    Every input is promoted to float64; the op must be deterministic and
    emit finite values in a neighborhood of the inputs.
    """
    inputs64 = [np.asarray(x, dtype=np.float64) for x in inputs]
    for x in inputs64:
        if not np.all(np.isfinite(x)):
            raise ValueError("gradcheck inputs must be finite")

    tensors = [Tensor(x.copy(), requires_grad=True) for x in inputs64]
    out = op(*tensors)
    rng = np.random.default_rng(seed)
    projection = rng.standard_normal(out.data.shape)
    out.backward(projection)
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors
    ]

    def scalar_at(perturbed: list[np.ndarray]) -> float:
        ts = [Tensor(p) for p in perturbed]
        return float((op(*ts).data * projection).sum())

    per_input = []
    worst = 0.0
    for i, x in enumerate(inputs64):
        numeric = np.zeros_like(x)
        flat = numeric.reshape(-1)
        base = [v.copy() for v in inputs64]
        xi = base[i].reshape(-1)
        for j in range(xi.size):
            orig = xi[j]
            xi[j] = orig + eps
            f_plus = scalar_at(base)
            xi[j] = orig - eps
            f_minus = scalar_at(base)
            xi[j] = orig
            flat[j] = (f_plus - f_minus) / (2.0 * eps)
        scale = max(float(np.abs(analytic[i]).max(initial=0.0)), float(np.abs(numeric).max(initial=0.0)), 1e-8)
        err = float(np.abs(analytic[i] - numeric).max(initial=0.0)) / scale
        per_input.append(err)
        worst = max(worst, err)
    return GradcheckReport(max_rel_error=worst, tol=tol, per_input=per_input)
