"""Tensor core: reverse-mode graph, operations, Adam."""
from . import ops
from .gradcheck import gradcheck, max_relative_error, numerical_grad
from .optim import AdamState, adam_step, init_params
from .tensor import NonFiniteError, Tensor, as_tensor, backward, checked, no_grad, rng

__all__ = [
    "ops", "Tensor", "as_tensor", "backward", "checked", "no_grad", "rng",
    "NonFiniteError", "AdamState", "adam_step", "init_params", "gradcheck",
    "max_relative_error", "numerical_grad",
]
