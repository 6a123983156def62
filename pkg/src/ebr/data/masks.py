"""Missing-data mask generation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core.tensor import rng

__all__ = ["MaskSpec", "gen_mask", "gen_masks", "missing_rates"]


@dataclass(frozen=True)
class MaskSpec:
    """``uniform``: exactly ``round(rate * size)`` missing entries drawn without
    replacement. ``squares``: ``n_squares`` squares of side ``width`` removed
    at uniformly drawn centers, overlapping and clipped at borders.

    ``joint_last_axis`` makes uniform masks drop whole sites (all entries of
    the last axis together) instead of individual scalars.
    """

    kind: str = "uniform"
    rate: float = 0.0
    n_squares: int = 1
    width: int = 1
    seed: int = 0
    joint_last_axis: bool = False

    def __post_init__(self):
        if self.kind == "uniform":
            if not 0.0 <= self.rate <= 1.0:
                raise ValueError(f"missing rate must be in [0, 1], got {self.rate}")
        elif self.kind == "squares":
            if self.n_squares < 1 or self.width < 1:
                raise ValueError(f"need n_squares >= 1 and width >= 1, got {self.n_squares}, {self.width}")
        else:
            raise ValueError(f"unknown mask kind {self.kind!r}")


def gen_mask(shape, spec: MaskSpec, index: int = 0) -> np.ndarray:
    """uint8 mask of ``shape`` (1 = observed); ``index`` selects an RNG stream."""
    shape = tuple(int(s) for s in shape)
    g = rng(spec.seed, index)
    if spec.kind == "uniform":
        site_shape = shape[:-1] if spec.joint_last_axis else shape
        n = int(np.prod(site_shape))
        flat = np.ones(n, dtype=np.uint8)
        flat[g.choice(n, size=int(round(spec.rate * n)), replace=False)] = 0
        mask = flat.reshape(site_shape)
        if spec.joint_last_axis:
            mask = np.repeat(mask[..., None], shape[-1], axis=-1)
        return mask
    if len(shape) < 2:
        raise ValueError(f"square masks need at least 2 axes, got shape {shape}")
    h, w = shape[:2]
    plane = np.ones((h, w), dtype=np.uint8)
    half = spec.width // 2
    for _ in range(spec.n_squares):
        ci, cj = int(g.integers(h)), int(g.integers(w))
        i0, j0 = max(ci - half, 0), max(cj - half, 0)
        plane[i0:max(ci - half + spec.width, 0), j0:max(cj - half + spec.width, 0)] = 0
    return np.broadcast_to(plane.reshape((h, w) + (1,) * (len(shape) - 2)), shape).copy()


def gen_masks(n: int, shape, spec: MaskSpec) -> np.ndarray:
    """``n`` independent masks, stream ``i`` for sample ``i``."""
    return np.stack([gen_mask(shape, spec, i) for i in range(n)])


def missing_rates(masks: np.ndarray) -> np.ndarray:
    """Per-sample fraction of missing entries."""
    masks = np.asarray(masks)
    return 1.0 - masks.reshape(len(masks), -1).mean(axis=1)
