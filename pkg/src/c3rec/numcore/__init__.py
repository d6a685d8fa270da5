"""Dense float64 tensor core: reverse-mode autograd, fused kernels, Adam."""

from .adam import AdamState, adam_step
from .backend import backend_name
from .gradcheck import grad_check
from .tensor import (Tensor, concat, dropout, layer_norm, linear,
                     masked_attention, no_grad, softmax_rows, take_rows)

__all__ = [
    "AdamState",
    "Tensor",
    "adam_step",
    "backend_name",
    "concat",
    "dropout",
    "grad_check",
    "layer_norm",
    "linear",
    "masked_attention",
    "no_grad",
    "softmax_rows",
    "take_rows",
]
