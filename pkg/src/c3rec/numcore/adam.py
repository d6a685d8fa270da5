"""Adam with bias correction, one state per parameter tensor."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericalError, StateError
from .tensor import Tensor


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8

    @classmethod
    def for_param(cls, param: Tensor, lr: float = 1e-3, beta1: float = 0.9,
                  beta2: float = 0.999, eps_adam: float = 1e-8) -> "AdamState":
        return cls(m=np.zeros_like(param.data), v=np.zeros_like(param.data),
                   lr=lr, beta1=beta1, beta2=beta2, eps_adam=eps_adam)


def adam_step(param: Tensor, state: AdamState) -> None:
    """In-place Adam update; zeroes the grad buffer afterwards."""
    if param.grad is None:
        raise StateError("adam_step called on a parameter with no gradient")
    g = param.grad
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    param.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps_adam)
    if not np.all(np.isfinite(param.data)):
        raise NumericalError("non-finite parameter after adam_step")
    param.zero_grad()
