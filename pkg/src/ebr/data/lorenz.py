"""Lorenz-63 simulation with a classical fourth-order Runge-Kutta integrator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core.tensor import rng

__all__ = ["LorenzParams", "lorenz_field", "lorenz_rk4_step", "simulate_lorenz",
           "attractor_states", "lorenz_dataset", "SPINUP_STEPS"]

SPINUP_STEPS = 10_000
DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class LorenzParams:
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    dt_int: float = 0.01
    dt_sub: float = 0.01
    n_steps: int = 200

    def __post_init__(self):
        if self.dt_int <= 0:
            raise ValueError(f"dt_int must be positive, got {self.dt_int}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        ratio = self.dt_sub / self.dt_int
        if ratio < 1 - 1e-9 or abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"dt_sub={self.dt_sub} is not an integer multiple of dt_int={self.dt_int}")

    @property
    def substeps(self) -> int:
        return int(round(self.dt_sub / self.dt_int))


def lorenz_field(x: np.ndarray, p: LorenzParams) -> np.ndarray:
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    return np.stack([p.sigma * (x2 - x1),
                     p.rho * x1 - x2 - x1 * x3,
                     x1 * x2 - p.beta * x3], axis=-1)


def lorenz_rk4_step(state, params: LorenzParams, dt: float | None = None) -> np.ndarray:
    """One RK4 step of size ``dt`` (default ``params.dt_int``); any leading axes."""
    x = np.asarray(state, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite Lorenz state")
    h = params.dt_int if dt is None else dt
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    k1 = lorenz_field(x, params)
    k2 = lorenz_field(x + 0.5 * h * k1, params)
    k3 = lorenz_field(x + 0.5 * h * k2, params)
    k4 = lorenz_field(x + h * k3, params)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def simulate_lorenz(params: LorenzParams, initial) -> np.ndarray:
    """``n_steps`` states sampled every ``dt_sub``, starting with ``initial``.

    ``initial`` may be a single 3-vector or a stack ``(n, 3)``; the output is
    ``(n_steps, 3)`` or ``(n, n_steps, 3)`` accordingly.
    """
    x = np.array(initial, dtype=np.float64)
    out = np.empty((params.n_steps,) + x.shape)
    out[0] = x
    for k in range(1, params.n_steps):
        for _ in range(params.substeps):
            x = lorenz_rk4_step(x, params)
        if np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            raise FloatingPointError(f"Lorenz integration diverged at step {k}")
        out[k] = x
    return np.moveaxis(out, 0, -2) if x.ndim > 1 else out


def attractor_states(n: int, seed: int, params: LorenzParams | None = None,
                     spinup: int = SPINUP_STEPS, jitter: float = 1.0) -> np.ndarray:
    """``n`` independent states on the attractor.

    Each member starts at (1, 1, 1) plus a seeded Gaussian jitter and is
    integrated for ``spinup`` steps of ``dt_int``.
    """
    params = params or LorenzParams()
    x = np.ones((n, 3)) + jitter * rng(seed, 0x10E).standard_normal((n, 3))
    for _ in range(spinup):
        x = lorenz_rk4_step(x, params)
    return x


def lorenz_dataset(n_series: int, params: LorenzParams, seed: int) -> np.ndarray:
    """``(n_series, n_steps, 3)`` series from independent spin-ups."""
    return simulate_lorenz(params, attractor_states(n_series, seed, params))
