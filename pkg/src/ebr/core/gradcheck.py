"""Central finite-difference gradient checking (64-bit only)."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor

__all__ = ["numerical_grad", "max_relative_error", "gradcheck"]


def numerical_grad(f: Callable[[], float], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """d f / d param by central differences, perturbing ``param.data`` in place."""
    if param.dtype != np.float64:
        raise TypeError("finite differences need float64 parameters")
    out = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return out


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - b| / max(|a|, |b|, floor) over entries."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def gradcheck(build_loss: Callable[[], Tensor], params: Sequence[Tensor],
              h: float = 1e-5, floor: float = 1e-8) -> float:
    """Compare backprop gradients of ``build_loss()`` with finite differences.

    Returns the worst relative error over all parameter entries.
    """
    for p in params:
        p.zero_grad()
    build_loss().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    def f():
        return float(build_loss().data.reshape(-1)[0])

    worst = 0.0
    for p, ga in zip(params, analytic):
        gn = numerical_grad(f, p, h)
        worst = max(worst, max_relative_error(ga, gn, floor))
    return worst
