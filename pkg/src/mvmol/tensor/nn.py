"""Parameter containers and the basic layers used by the model."""
import numpy as np

from . import core
from .core import Tensor


def Parameter(data):
    return Tensor(np.asarray(data, dtype=core.get_default_dtype()), requires_grad=True)


class Module:
    """Walks attributes (and lists of modules) to enumerate parameters.

    Names are dotted attribute paths in definition order, e.g.
    ``qformer.layers.0.attn.wq``.
    """

    def named_parameters(self, prefix=""):
        out = []
        for name, val in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(val, Tensor) and val.requires_grad:
                out.append((full, val))
            elif isinstance(val, Module):
                out.extend(val.named_parameters(full + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{full}.{i}."))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {n: p.data for n, p in self.named_parameters()}

    def load_state_dict(self, state, strict=True):
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unknown = sorted(set(state) - set(own))
            if missing or unknown:
                raise KeyError(f"state mismatch; missing={missing[:5]} unknown={unknown[:5]}")
        for n, arr in state.items():
            if n not in own:
                continue
            p = own[n]
            if tuple(arr.shape) != p.shape:
                raise ValueError(f"{n}: shape {tuple(arr.shape)} != {p.shape}")
            p.data = np.ascontiguousarray(arr, dtype=p.dtype)

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def num_parameters(self):
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True, std=0.02):
        self.weight = Parameter(rng.trunc_normal((d_in, d_out), std))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        y = core.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5):
        self.gain = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x):
        return core.layer_norm(x, self.gain, self.bias, self.eps)


class Embedding(Module):
    def __init__(self, n, d, rng, std=0.02):
        self.weight = Parameter(rng.trunc_normal((n, d), std))

    def __call__(self, ids):
        return core.embedding(self.weight, ids)


class FeedForward(Module):
    def __init__(self, d, hidden, rng, std=0.02):
        self.fc1 = Linear(d, hidden, rng, std=std)
        self.fc2 = Linear(hidden, d, rng, std=std)

    def __call__(self, x):
        return self.fc2(core.gelu(self.fc1(x)))
