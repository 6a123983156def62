"""Adam optimizer and Glorot-style uniform parameter initialization."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError, rng

__all__ = ["AdamState", "adam_step", "init_params"]


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update of ``params`` (arrays, updated in place).

    Moments are created lazily on the first call. A non-finite gradient
    rejects the whole step and leaves ``state`` untouched.
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter of shape {p.shape}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    elif len(state.m) != len(params):
        raise ValueError("optimizer state does not match parameter list")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
    return params, state


def init_params(shape, fan_in: int, seed: int, *stream: int, dtype=np.float64) -> np.ndarray:
    """Uniform samples on ``[-sqrt(6/fan_in), sqrt(6/fan_in)]``."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    bound = np.sqrt(6.0 / fan_in)
    return rng(seed, *stream).uniform(-bound, bound, size=shape).astype(dtype)
