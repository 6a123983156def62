from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sample import ObservedSample

__all__ = ["Normalizer", "normalize_fit"]


@dataclass(frozen=True)
class Normalizer:
    """Per-channel (last axis) affine standardization."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.std + self.mean

    def apply_sample(self, s: ObservedSample) -> ObservedSample:
        return ObservedSample(np.where(s.omega > 0, self.apply(np.where(s.omega > 0, s.y, 0)), 0), s.omega)


def normalize_fit(samples) -> Normalizer:
    """Fit mean/std per channel using observed entries only.

    ``samples`` is an :class:`ObservedSample` (possibly batched) or a list of
    them. Channels without observations or with zero observed variance are
    rejected.
    """
    if isinstance(samples, ObservedSample):
        samples = [samples]
    ys, ws = [], []
    for s in samples:
        c = s.y.shape[-1]
        ys.append(np.asarray(s.y, dtype=np.float64).reshape(-1, c))
        ws.append(np.asarray(s.omega).reshape(-1, c) > 0)
    y, w = np.concatenate(ys), np.concatenate(ws)
    counts = w.sum(axis=0)
    if np.any(counts == 0):
        raise ValueError(f"channels {np.flatnonzero(counts == 0).tolist()} have no observed entries")
    yz = np.where(w, y, 0.0)
    mean = yz.sum(axis=0) / counts
    var = (np.where(w, y - mean, 0.0) ** 2).sum(axis=0) / counts
    std = np.sqrt(var)
    if np.any(std == 0):
        raise ValueError(f"channels {np.flatnonzero(std == 0).tolist()} have zero observed variance")
    return Normalizer(mean, std)
