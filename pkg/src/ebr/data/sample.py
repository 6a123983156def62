from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ObservedSample"]


@dataclass(frozen=True)
class ObservedSample:
    """Observations ``y`` with availability mask ``omega`` (1 = observed).

    Both arrays share a shape, which may carry a leading batch axis. Values of
    ``y`` where ``omega == 0`` are never read; they may hold anything,
    including NaN.
    """

    y: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y)
        omega = np.asarray(self.omega)
        if y.shape != omega.shape:
            raise ValueError(f"observation shape {y.shape} != mask shape {omega.shape}")
        if omega.size and not np.all((omega == 0) | (omega == 1)):
            raise ValueError("mask entries must be 0 or 1")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "omega", omega)

    @property
    def shape(self):
        return self.y.shape

    def zero_filled(self, dtype=np.float64) -> np.ndarray:
        """``y`` on observed sites, 0 elsewhere; hidden values are not touched."""
        return np.where(self.omega > 0, self.y, 0).astype(dtype)

    def __getitem__(self, idx) -> "ObservedSample":
        return ObservedSample(self.y[idx], self.omega[idx])

    def __len__(self) -> int:
        return len(self.y)

    @staticmethod
    def stack(samples) -> "ObservedSample":
        samples = list(samples)
        return ObservedSample(np.stack([s.y for s in samples]), np.stack([s.omega for s in samples]))
