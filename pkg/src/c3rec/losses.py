"""Training objectives: positive / negative / margin recommendation losses,
their alpha-weighted combination, and the InfoNCE term over paired
masked-group views, combined into the total loss with weight beta.

All functions take and return autograd Tensors so gradients flow back to
the scores / view vectors that produced them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .numcore import Tensor


@dataclass
class LossReport:
    l_pos: float = 0.0
    l_neg: float = 0.0
    l_margin: float = 0.0
    l_main: float = 0.0
    l_cont: float = 0.0
    l_total: float = 0.0
    n_pos: int = 0
    n_neg: int = 0
    n_pairs: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def positive_loss(scores_pos: Tensor, epsilon: float = 1e-8) -> Tensor:
    """Mean of -log(s + epsilon) over positive scores."""
    if scores_pos.data.size == 0:
        raise DimensionError("positive_loss needs a non-empty score set")
    return -((scores_pos + epsilon).log()).mean()


def negative_loss(scores_neg: Tensor) -> Tensor:
    """Mean of exp(s) - 1 over negative scores."""
    if scores_neg.data.size == 0:
        raise DimensionError("negative_loss needs a non-empty score set")
    return (scores_neg.exp() - 1.0).mean()


def margin_loss(scores_pos: Tensor, scores_neg: Tensor, delta: float = 1.0) -> Tensor:
    """Hinge on every positive x negative pair: max(0, delta - (s_p - s_n)).

    scores_pos is (P,); scores_neg is (P, k) pairing each positive with its
    own negatives, or (n,) to pair every positive with every negative.
    """
    if scores_pos.data.size == 0 or scores_neg.data.size == 0:
        raise DimensionError("margin_loss needs non-empty positive and negative sets")
    p = scores_pos.data.shape[0]
    pos = scores_pos.reshape(p, 1)
    if scores_neg.data.ndim == 1:
        neg = scores_neg.reshape(1, scores_neg.data.shape[0])
    else:
        neg = scores_neg
    return (delta - (pos - neg)).relu().mean()


def main_loss(l_pos: Tensor, l_neg: Tensor, l_margin: Tensor, alpha: float) -> Tensor:
    return (l_pos + l_neg) * alpha + l_margin * (1.0 - alpha)


def info_nce(views: Tensor, tau: float = 1.0) -> Tensor:
    """InfoNCE over (2j, 2j+1)-paired view vectors, cosine similarity,
    symmetrized over both anchors of each pair.

    For each anchor the denominator runs over the other 2B-1 views; with a
    single pair the loss is identically zero (numerator equals denominator).
    """
    n = views.data.shape[0]
    if n < 2 or n % 2 != 0:
        raise DimensionError("info_nce needs an even number (>= 2) of paired views")
    if n == 2:
        warnings.warn("info_nce with a single pair is identically zero",
                      stacklevel=2)
        return Tensor(np.zeros(()))
    norms = (views * views).sum(axis=1, keepdims=True).sqrt()
    unit = views / norms
    logits = (unit @ unit.transpose((1, 0))) * (1.0 / tau)
    # constant per-row max keeps exp() in range without changing the value
    shift = logits.data.max(axis=1, keepdims=True)
    e = (logits - Tensor(shift)).exp()
    eye = np.eye(n)
    partner = np.zeros((n, n))
    idx = np.arange(n)
    partner[idx, idx ^ 1] = 1.0
    numer = (e * Tensor(partner)).sum(axis=1)
    denom = e.sum(axis=1) - (e * Tensor(eye)).sum(axis=1)
    return -((numer / denom).log()).mean()


def total_loss(l_main: Tensor, l_cont: Tensor, beta: float) -> Tensor:
    return l_main + l_cont * beta
