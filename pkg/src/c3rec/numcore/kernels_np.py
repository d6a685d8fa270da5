"""NumPy implementations of the fused hot kernels.

Same signatures as the compiled extension in _fastkernels.pyx; the backend
module picks whichever is available. All inputs/outputs are C-contiguous
float64 arrays with the reduced axis last, flattened to 2-D by the caller.
"""

import numpy as np

BACKEND_NAME = "numpy"


def softmax_rows_fwd(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=1, keepdims=True)
    y = np.exp(x - m)
    y /= y.sum(axis=1, keepdims=True)
    return y


def softmax_rows_bwd(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    # dx = y * (dy - sum(dy * y, axis=1))
    dot = (dy * y).sum(axis=1, keepdims=True)
    return y * (dy - dot)


def attn_fwd(q, k, v, key_bias, scale):
    """Masked scaled-dot-product attention over (B, h, T, kdim) stacks.

    key_bias is (B, T) additive (0 or a large negative at masked keys).
    Returns (ctx, probs); probs are cached for the backward pass.
    """
    logits = np.matmul(q, np.swapaxes(k, -1, -2)) * scale
    logits += key_bias[:, None, None, :]
    m = logits.max(axis=-1, keepdims=True)
    probs = np.exp(logits - m)
    probs /= probs.sum(axis=-1, keepdims=True)
    return np.matmul(probs, v), probs


def attn_bwd(dctx, probs, q, k, v, scale):
    """Returns (dq, dk, dv) for attn_fwd."""
    dv = np.matmul(np.swapaxes(probs, -1, -2), dctx)
    dprobs = np.matmul(dctx, np.swapaxes(v, -1, -2))
    dot = (dprobs * probs).sum(axis=-1, keepdims=True)
    dlogits = probs * (dprobs - dot)
    dq = np.matmul(dlogits, k) * scale
    dk = np.matmul(np.swapaxes(dlogits, -1, -2), q) * scale
    return dq, dk, dv


def layer_norm_fwd(x, gain, bias, eps):
    """Returns (y, mean, rstd); mean/rstd are cached for the backward pass."""
    mean = x.mean(axis=1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mean) * rstd * gain + bias
    return y, mean[:, 0], rstd[:, 0]


def layer_norm_bwd(dy, x, gain, mean, rstd):
    """Returns (dx, dgain, dbias)."""
    n = x.shape[1]
    mean = mean[:, None]
    rstd = rstd[:, None]
    xhat = (x - mean) * rstd
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    dxhat = dy * gain
    dx = rstd / n * (n * dxhat - dxhat.sum(axis=1, keepdims=True)
                     - xhat * (dxhat * xhat).sum(axis=1, keepdims=True))
    return dx, dgain, dbias
