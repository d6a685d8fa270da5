"""Central-difference gradient checking against the autograd backward pass."""

import math

import numpy as np

from ..errors import NumericalError
from .tensor import Tensor


def grad_check(f, params, rng=None, max_coords_per_param: int = 16,
               step: float = 1e-5) -> float:
    """Max relative error between autograd and finite-difference gradients.

    `f` is a deterministic zero-argument callable returning a scalar Tensor
    computed from `params`. Coordinates are sampled (up to
    `max_coords_per_param` each) to keep the cost linear in the number of
    parameters rather than their sizes.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    out = f()
    if not math.isfinite(float(out.data)):
        raise NumericalError("grad_check objective is not finite")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        coords = (np.arange(n) if n <= max_coords_per_param
                  else rng.choice(n, size=max_coords_per_param, replace=False))
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            f_plus = float(f().data)
            flat[c] = orig - step
            f_minus = float(f().data)
            flat[c] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NumericalError("non-finite objective during perturbation")
            numeric = (f_plus - f_minus) / (2.0 * step)
            a_c = a.reshape(-1)[c]
            rel = abs(a_c - numeric) / max(abs(a_c) + abs(numeric), 1e-6)
            worst = max(worst, rel)
    for p in params:
        p.zero_grad()
    return worst
