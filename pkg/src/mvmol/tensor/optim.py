"""AdamW with decoupled weight decay, plus gradient clipping."""
import numpy as np

from ..errors import OptimizerStateError
from . import kernels


def adamw_step(params, grads, state, lr, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
    """One in-place AdamW update.

    ``params`` and ``grads`` are parallel lists of arrays; ``state`` is a dict
    with ``step`` and lists ``m``/``v`` (created on first use). Missing grads
    (None) are treated as zero.
    """
    if "m" not in state:
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
        state["step"] = 0
    if len(state["m"]) != len(params):
        raise OptimizerStateError(f"state holds {len(state['m'])} buffers for {len(params)} params")
    state["step"] += 1
    t = state["step"]
    b1, b2 = betas
    bc1, bc2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for i, p in enumerate(params):
        m, v = state["m"][i], state["v"][i]
        if m.shape != p.shape or m.dtype != p.dtype:
            raise OptimizerStateError(f"moment buffer {i} has shape {m.shape}, param {p.shape}")
        g = grads[i]
        g = np.zeros_like(p) if g is None else np.ascontiguousarray(g, dtype=p.dtype)
        if g.shape != p.shape:
            raise OptimizerStateError(f"grad {i} has shape {g.shape}, param {p.shape}")
        wd = weight_decay[i] if isinstance(weight_decay, (list, tuple)) else weight_decay
        kernels.adamw_update(p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
                             lr, b1, b2, eps, wd, bc1, bc2)
    return state


def clip_grad_norm(tensors, max_norm):
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = np.sqrt(sum(float((t.grad.astype(np.float64) ** 2).sum()) for t in tensors if t.grad is not None))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for t in tensors:
            if t.grad is not None:
                t.grad *= scale
    return total


class AdamW:
    """Stateful wrapper; matrices decay, vectors (biases, norms, gains) do not."""

    def __init__(self, named_params, lr=1e-3, weight_decay=0.05, betas=(0.9, 0.999), eps=1e-8):
        self.names = [n for n, _ in named_params]
        self.params = [p for _, p in named_params]
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.state = {}
        self._decay = [weight_decay if p.ndim >= 2 else 0.0 for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr=None):
        adamw_step([p.data for p in self.params], [p.grad for p in self.params], self.state,
                   self.lr if lr is None else lr, self._decay, self.betas, self.eps)
