"""Stochastic ensemble Kalman smoother.

The filter uses perturbed observations. Each analysis is written as a
right-multiplication ``E <- E @ X5`` by an ``M x M`` transform, and the same
transform is applied to every stored past ensemble, which is the full-lag
smoother. The transform is identity plus a rank-p term (p observed entries)
and is applied in factored form.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..core.tensor import rng
from ..data.lorenz import LorenzParams, attractor_states, lorenz_rk4_step
from ..data.sample import ObservedSample

__all__ = ["EnKSConfig", "EnsembleCollapse", "enks", "enks_smooth", "climatology"]


class EnsembleCollapse(FloatingPointError):
    def __init__(self, step: int, spread: float):
        super().__init__(f"ensemble collapsed at step {step} (spread {spread:.3e})")
        self.step = step


@dataclass(frozen=True)
class EnKSConfig:
    n_members: int = 200
    obs_var: float = 0.1
    inflation: float = 1.02
    seed: int = 0
    collapse_tol: float = 1e-12

    def __post_init__(self):
        if self.n_members < 2:
            raise ValueError(f"need at least 2 members, got {self.n_members}")
        if self.obs_var <= 0:
            raise ValueError(f"observation variance must be positive, got {self.obs_var}")
        if self.inflation < 1.0:
            raise ValueError(f"inflation must be >= 1, got {self.inflation}")


def _analysis_transform(e: np.ndarray, y: np.ndarray, sel: np.ndarray, r: float,
                        g: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Factors ``(u, v)`` of ``X5 = I + u @ v`` for ensemble ``e`` (n x M)
    observed at entries ``sel``. ``u`` is ``M x p`` with ``p`` the number of
    observed entries, so the transform is applied without forming ``M x M``."""
    m = e.shape[1]
    he = e[sel]
    ha = he - he.mean(axis=1, keepdims=True)
    c = ha @ ha.T / (m - 1) + r * np.eye(len(y))
    d = y[:, None] + np.sqrt(r) * g.standard_normal((len(y), m))
    return ha.T, np.linalg.solve(c, d - he) / (m - 1)


def enks(y: np.ndarray, omega: np.ndarray, prior: np.ndarray,
         propagate: Callable[[np.ndarray], np.ndarray], cfg: EnKSConfig) -> np.ndarray:
    """Smoothed ensemble mean, shape ``(T, n)``.

    ``y``/``omega`` are ``(T, n)``; ``prior`` is the ``(M, n)`` ensemble at
    the first step; ``propagate`` maps an ``(M, n)`` ensemble one step ahead.
    """
    y = np.asarray(y, dtype=np.float64)
    omega = np.asarray(omega) > 0
    e = np.asarray(prior, dtype=np.float64).T.copy()  # n x M
    if e.shape[1] != cfg.n_members:
        raise ValueError(f"prior has {e.shape[1]} members, config says {cfg.n_members}")
    stored = []
    for t in range(len(y)):
        if t > 0:
            e = propagate(e.T).T
            if cfg.inflation != 1.0:
                mu = e.mean(axis=1, keepdims=True)
                e = mu + cfg.inflation * (e - mu)
        sel = np.flatnonzero(omega[t])
        if sel.size:
            u, v = _analysis_transform(e, y[t, sel], sel, cfg.obs_var, rng(cfg.seed, 0xE5, t))
            e = e + (e @ u) @ v
            for k in range(len(stored)):
                stored[k] = stored[k] + (stored[k] @ u) @ v
            spread = float(np.sqrt(np.mean(np.var(e, axis=1, ddof=1))))
            if not np.isfinite(spread) or spread < cfg.collapse_tol:
                raise EnsembleCollapse(t, spread)
        stored.append(e)
    return np.stack([s.mean(axis=1) for s in stored])


@functools.lru_cache(maxsize=8)
def _climatology_cached(n: int, seed: int, params: LorenzParams) -> np.ndarray:
    out = attractor_states(n, seed, params)
    out.setflags(write=False)
    return out


def climatology(n: int, seed: int, params: LorenzParams) -> np.ndarray:
    """``n`` attractor states from independent spin-ups (cached)."""
    return _climatology_cached(n, seed, params).copy()


def enks_smooth(series: ObservedSample, lorenz: LorenzParams, cfg: EnKSConfig,
                prior: np.ndarray | None = None) -> np.ndarray:
    """EnKS estimate of a ``(T, 3)`` Lorenz series with the true dynamics.

    Without ``prior`` the initial ensemble is drawn from the attractor
    climatology. A batched ``series`` is smoothed sample by sample.
    """
    if series.y.ndim == 3:
        return np.stack([enks_smooth(series[i], lorenz, cfg, prior) for i in range(len(series))])
    if series.shape[-1] != 3:
        raise ValueError(f"expected a (T, 3) series, got {series.shape}")
    if prior is None:
        prior = climatology(cfg.n_members, cfg.seed, lorenz)

    def propagate(ens):
        for _ in range(lorenz.substeps):
            ens = lorenz_rk4_step(ens, lorenz)
        return ens

    return enks(series.zero_filled(np.float64), series.omega, prior, propagate, cfg)
