"""Pure-numpy kernels. Reference implementation and fallback backend.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
Inputs are C-contiguous 2-D arrays (callers reshape to ``(rows, width)``);
float32 and float64 are both accepted and the output dtype follows the input.
Row reductions accumulate in float64.
"""
import numpy as np

GELU_C = 0.7978845608028654  # sqrt(2 / pi)
GELU_A = 0.044715


def softmax_fwd(x, mask=None):
    """Row softmax. ``mask`` (uint8, same shape) keeps entries where nonzero.

    Returns ``(y, ok)`` where ``ok`` is False if some row is fully masked.
    """
    if mask is not None:
        keep = mask.astype(bool)
        if not keep.any(axis=1).all():
            return None, False
        x = np.where(keep, x, -np.inf)
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=1, keepdims=True, dtype=np.float64)
    return (e / s).astype(x.dtype, copy=False), True


def softmax_bwd(y, g):
    dot = (g * y).sum(axis=1, keepdims=True, dtype=np.float64)
    return (y * (g - dot)).astype(y.dtype, copy=False)


def layernorm_fwd(x, gain, bias, eps):
    x64 = x.astype(np.float64)
    mean = x64.mean(axis=1, keepdims=True)
    var = ((x64 - mean) ** 2).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = ((x64 - mean) * rstd).astype(x.dtype)
    y = xhat * gain + bias
    return y.astype(x.dtype, copy=False), xhat, rstd[:, 0].astype(x.dtype)


def layernorm_bwd(g, xhat, rstd, gain):
    dxhat = (g * gain).astype(np.float64)
    xh = xhat.astype(np.float64)
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xh).mean(axis=1, keepdims=True)
    dx = (rstd.astype(np.float64)[:, None] * (dxhat - m1 - xh * m2)).astype(g.dtype)
    dgain = (g.astype(np.float64) * xh).sum(axis=0).astype(g.dtype)
    dbias = g.sum(axis=0, dtype=np.float64).astype(g.dtype)
    return dx, dgain, dbias


def gelu_fwd(x):
    inner = GELU_C * (x + GELU_A * x * x * x)
    return (0.5 * x * (1.0 + np.tanh(inner))).astype(x.dtype, copy=False)


def gelu_bwd(x, g):
    inner = GELU_C * (x + GELU_A * x * x * x)
    t = np.tanh(inner)
    dinner = GELU_C * (1.0 + 3.0 * GELU_A * x * x)
    d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
    return (g * d).astype(x.dtype, copy=False)


def pairwise_distances(coords):
    c = np.asarray(coords, dtype=np.float64)
    diff = c[:, None, :] - c[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def adamw_update(p, g, m, v, lr, beta1, beta2, eps, weight_decay, bc1, bc2):
    """In-place decoupled-decay Adam update on flat arrays."""
    if weight_decay:
        p *= 1.0 - lr * weight_decay
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(p.dtype, copy=False)
