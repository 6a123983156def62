"""Truncated PCA and the DINEOF-style fixed-point fill that uses it."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data.sample import ObservedSample

__all__ = ["PcaModel", "pca_fit", "dineof_interpolate"]


@dataclass(frozen=True)
class PcaModel:
    """``components`` has shape ``(d, D)`` with orthonormal rows."""

    mean: np.ndarray
    components: np.ndarray
    sample_shape: tuple

    @property
    def d(self) -> int:
        return self.components.shape[0]

    @property
    def dim(self) -> int:
        return self.mean.size

    def project(self, x: np.ndarray) -> np.ndarray:
        """``mean + C^T C (x - mean)`` for a batch of flattened samples."""
        z = (x - self.mean) @ self.components.T
        return self.mean + z @ self.components

    def reconstruction_mse(self, data) -> float:
        x = np.asarray(data, dtype=np.float64).reshape(len(data), -1)
        return float(np.mean((self.project(x) - x) ** 2))


def pca_fit(gap_free, d: int) -> PcaModel:
    """Top-``d`` principal directions of ``gap_free`` (samples on axis 0).

    Each direction's sign is fixed so its largest-magnitude entry is positive.
    """
    data = np.asarray(gap_free, dtype=np.float64)
    n = len(data)
    x = data.reshape(n, -1)
    if d < 0 or d > x.shape[1]:
        raise ValueError(f"d={d} outside [0, {x.shape[1]}]")
    if n <= d:
        raise ValueError(f"need more than d={d} samples, got {n}")
    mean = x.mean(axis=0)
    _, _, vt = np.linalg.svd(x - mean, full_matrices=False)
    comps = vt[:d].copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(mean, comps, data.shape[1:])


def dineof_interpolate(pca: PcaModel, sample: ObservedSample, n_iters: int = 15,
                       return_pre: bool = False):
    """Iterate ``x <- project_obs(pca.project(x))`` from the zero fill.

    ``sample`` may be batched. Returns arrays shaped like ``sample.y``.
    """
    if n_iters < 1:
        raise ValueError(f"n_iters must be >= 1, got {n_iters}")
    single = sample.shape == pca.sample_shape
    if not single and sample.shape[1:] != pca.sample_shape:
        raise ValueError(f"sample shape {sample.shape} does not match PCA shape {pca.sample_shape}")
    shape = sample.shape
    obs = (sample.omega > 0).reshape(-1, pca.dim)
    y = sample.zero_filled(np.float64).reshape(-1, pca.dim)
    x = y.copy()
    xp = x
    for k in range(1, n_iters + 1):
        xp = pca.project(x)
        if not np.all(np.isfinite(xp)):
            raise FloatingPointError(f"non-finite DINEOF iterate at iteration {k}")
        x = np.where(obs, y, xp)
    x, xp = x.reshape(shape), xp.reshape(shape)
    return (x, xp) if return_pre else x
