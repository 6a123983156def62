"""Datasets: Lorenz-63 series, masks, normalization and tensor files."""
from .io import FormatError, load_idx, tensor_io_read, tensor_io_write, write_idx
from .lorenz import (LorenzParams, attractor_states, lorenz_dataset, lorenz_rk4_step,
                     simulate_lorenz)
from .masks import MaskSpec, gen_mask, gen_masks, missing_rates
from .mnist import load_mnist
from .normalize import Normalizer, normalize_fit
from .sample import ObservedSample

__all__ = [
    "FormatError", "load_idx", "tensor_io_read", "tensor_io_write", "write_idx",
    "LorenzParams", "attractor_states", "lorenz_dataset", "lorenz_rk4_step",
    "simulate_lorenz", "MaskSpec", "gen_mask", "gen_masks", "missing_rates",
    "load_mnist", "Normalizer", "normalize_fit", "ObservedSample",
]
