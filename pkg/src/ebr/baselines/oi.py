"""Optimal interpolation with a separable Gaussian covariance.

The estimate minimizes ``x^T S^-1 x + lam * ||x - y||^2`` on observed sites
and has the closed form ``S[:, o] (S[o, o] + I / lam)^-1 y[o]``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from ..data.sample import ObservedSample

__all__ = ["OIConfig", "oi_covariance", "oi_interpolate", "oi_energy", "tune_oi",
           "MAX_OBSERVED"]

MAX_OBSERVED = 20_000
JITTER = 1e-8


@dataclass(frozen=True)
class OIConfig:
    """``length_scales`` gives one scale per grid axis; 0 means uncorrelated
    along that axis (e.g. a channel axis)."""

    length_scales: tuple = (1.0,)
    signal_var: float = 1.0
    lam: float = 1e2

    def __post_init__(self):
        object.__setattr__(self, "length_scales", tuple(float(s) for s in self.length_scales))
        if any(s < 0 for s in self.length_scales):
            raise ValueError(f"length scales must be >= 0, got {self.length_scales}")
        if self.signal_var <= 0 or self.lam <= 0:
            raise ValueError("signal variance and lambda must be positive")


def _axis_kernel(n: int, scale: float) -> np.ndarray:
    if scale == 0:
        return np.eye(n)
    i = np.arange(n, dtype=np.float64)
    return np.exp(-((i[:, None] - i[None, :]) ** 2) / (2.0 * scale * scale))


def _coords(shape):
    return np.stack(np.unravel_index(np.arange(int(np.prod(shape))), shape), axis=1)


def oi_covariance(shape, cfg: OIConfig, rows=None, cols=None) -> np.ndarray:
    """Covariance between flat site indices ``rows`` and ``cols`` (default all)."""
    shape = tuple(shape)
    if len(cfg.length_scales) != len(shape):
        raise ValueError(f"{len(cfg.length_scales)} length scales for a rank-{len(shape)} grid")
    coords = _coords(shape)
    rows = np.arange(len(coords)) if rows is None else np.asarray(rows)
    cols = np.arange(len(coords)) if cols is None else np.asarray(cols)
    k = np.full((len(rows), len(cols)), cfg.signal_var)
    for a, (n, s) in enumerate(zip(shape, cfg.length_scales)):
        ka = _axis_kernel(n, s)
        k *= ka[np.ix_(coords[rows, a], coords[cols, a])]
    return k


def oi_interpolate(sample: ObservedSample, cfg: OIConfig) -> np.ndarray:
    """Closed-form OI estimate for one sample (zero prior mean)."""
    shape = sample.shape
    obs = np.flatnonzero(np.asarray(sample.omega).ravel() > 0)
    if obs.size == 0:
        raise ValueError("no observed sites")
    if obs.size > MAX_OBSERVED:
        raise ValueError(f"{obs.size} observed sites exceed the dense-solve limit {MAX_OBSERVED}")
    y = sample.zero_filled(np.float64).ravel()[obs]
    k_oo = oi_covariance(shape, cfg, obs, obs)
    k_oo[np.diag_indices_from(k_oo)] += 1.0 / cfg.lam + JITTER
    try:
        chol = np.linalg.cholesky(k_oo)
    except np.linalg.LinAlgError as exc:
        raise ValueError("observation covariance is not positive definite") from exc
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, y))
    return (oi_covariance(shape, cfg, None, obs) @ alpha).reshape(shape)


def oi_energy(x, sample: ObservedSample, cfg: OIConfig, cov_inv=None) -> float:
    """``x^T S^-1 x + lam * ||x - y||^2_obs`` (dense; small grids only)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if cov_inv is None:
        cov_inv = np.linalg.inv(oi_covariance(sample.shape, cfg))
    obs = np.asarray(sample.omega).ravel() > 0
    r = (x - sample.zero_filled(np.float64).ravel())[obs]
    return float(x @ cov_inv @ x + cfg.lam * r @ r)


def tune_oi(samples: ObservedSample, truth, base: OIConfig, grid: dict) -> tuple[OIConfig, float]:
    """Grid search minimizing masked-site MSE on a held-out batch.

    ``grid`` maps ``OIConfig`` field names to candidate lists, e.g.
    ``{"length_scales": [(2, 0), (4, 0)], "lam": [10, 100]}``.
    """
    truth = np.asarray(truth, dtype=np.float64)
    keys = list(grid)
    best, best_err = None, np.inf
    for values in itertools.product(*(grid[k] for k in keys)):
        cfg = replace(base, **dict(zip(keys, values)))
        err, cnt = 0.0, 0
        for i in range(len(samples)):
            s = samples[i]
            hidden = s.omega == 0
            if not hidden.any() or not (~hidden).any():
                continue
            est = oi_interpolate(s, cfg)
            err += float(np.sum((est - truth[i])[hidden] ** 2))
            cnt += int(hidden.sum())
        score = err / max(cnt, 1)
        if score < best_err:
            best, best_err = cfg, score
    if best is None:
        raise ValueError("empty tuning grid")
    return best, best_err
