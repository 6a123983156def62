"""Unrolled interpolation operators.

Both schemes start from the zero-filled observation and alternate a
prediction step with an overwrite of the observed sites:

* fixed point:      ``x_p = psi(x)``
* learned gradient: ``x_p = x - G(x - psi(x))``

The gradient step is evaluated as ``psi(x) + (r - G(r))`` with
``r = x - psi(x)``, the same quantity rearranged so that an identity ``G``
reproduces the fixed-point iterates bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ops
from .core.tensor import Tensor, as_tensor, no_grad
from .data.sample import ObservedSample
from .models import EnergyModel, GradCorrector

__all__ = ["InterpolatorConfig", "project_obs", "fp_interpolate", "grad_interpolate",
           "interpolate", "interpolate_array", "DivergenceError", "DIVERGENCE_LIMIT"]

DIVERGENCE_LIMIT = 1e6


class DivergenceError(FloatingPointError):
    def __init__(self, iteration: int, reason: str):
        super().__init__(f"interpolation aborted at iteration {iteration}: {reason}")
        self.iteration = iteration


@dataclass
class InterpolatorConfig:
    scheme: str = "fixed-point"
    n_iters: int = 15
    corrector: GradCorrector | None = None

    def __post_init__(self):
        if self.scheme not in ("fixed-point", "learned-gradient"):
            raise ValueError(f"unknown interpolation scheme {self.scheme!r}")
        if self.n_iters < 1:
            raise ValueError(f"n_iters must be >= 1, got {self.n_iters}")
        if self.scheme == "learned-gradient" and self.corrector is None:
            raise ValueError("learned-gradient scheme needs a corrector")


def project_obs(x, sample: ObservedSample) -> Tensor:
    """Observed sites take ``y`` exactly, missing sites keep ``x``."""
    x = as_tensor(x)
    if x.shape != sample.shape:
        raise ValueError(f"state shape {x.shape} != observation shape {sample.shape}")
    keep = (sample.omega == 0).astype(x.dtype)
    obs = np.where(sample.omega > 0, sample.y, 0).astype(x.dtype)
    kept = ops.scale(x, keep)
    return ops.add(kept, Tensor(obs))


def _check(x: Tensor, k: int) -> None:
    d = x.data
    if not np.all(np.isfinite(d)):
        raise DivergenceError(k, "non-finite iterate")
    if d.size and np.max(np.abs(d)) > DIVERGENCE_LIMIT:
        raise DivergenceError(k, f"|x| exceeded {DIVERGENCE_LIMIT:g}")


def _run(step, model: EnergyModel, sample: ObservedSample, n_iters: int, x0=None):
    if n_iters < 1:
        raise ValueError(f"n_iters must be >= 1, got {n_iters}")
    x = Tensor(sample.zero_filled(model.dtype) if x0 is None else np.asarray(x0, dtype=model.dtype))
    xp = x
    for k in range(1, n_iters + 1):
        xp = step(x)
        _check(xp, k)
        x = project_obs(xp, sample)
    return x, xp


def fp_interpolate(model: EnergyModel, sample: ObservedSample, n_iters: int = 15,
                   return_pre: bool = False, x0=None):
    """``n_iters`` rounds of ``x <- project_obs(psi(x))`` from the zero fill.

    With ``return_pre`` the last pre-projection iterate is returned too.
    """
    x, xp = _run(model.psi, model, sample, n_iters, x0)
    return (x, xp) if return_pre else x


def grad_interpolate(model: EnergyModel, corrector: GradCorrector, sample: ObservedSample,
                     n_iters: int = 15, return_pre: bool = False, x0=None):
    """``n_iters`` rounds of ``x <- project_obs(x - G(x - psi(x)))``."""

    def step(x):
        p = model.psi(x)
        r = ops.sub(x, p)
        return ops.add(p, ops.sub(r, corrector(r)))

    x, xp = _run(step, model, sample, n_iters, x0)
    return (x, xp) if return_pre else x


def interpolate(model: EnergyModel, sample: ObservedSample, config: InterpolatorConfig,
                n_iters: int | None = None, return_pre: bool = False, x0=None):
    n = config.n_iters if n_iters is None else n_iters
    if config.scheme == "fixed-point":
        return fp_interpolate(model, sample, n, return_pre, x0)
    return grad_interpolate(model, config.corrector, sample, n, return_pre, x0)


def interpolate_array(model: EnergyModel, sample: ObservedSample, config: InterpolatorConfig,
                      n_iters: int | None = None, batch_size: int = 64):
    """Evaluation-mode interpolation over a batch; returns ``(x, x_pre)`` arrays."""
    xs, xps = [], []
    with no_grad():
        for i in range(0, len(sample), batch_size):
            x, xp = interpolate(model, sample[i:i + batch_size], config, n_iters, return_pre=True)
            xs.append(x.data)
            xps.append(xp.data)
    return np.concatenate(xs), np.concatenate(xps)
