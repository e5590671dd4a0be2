"""Minimal dense-tensor engine: autodiff, layers, optimizer, RNG."""
from . import kernels
from .core import (
    Tensor,
    as_tensor,
    backward,
    concat,
    cross_entropy,
    debug_enabled,
    default_dtype,
    embedding,
    exp,
    from_op,
    gelu,
    get_default_dtype,
    is_grad_enabled,
    l2_normalize,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    no_grad,
    relu,
    reshape,
    set_check_finite,
    set_debug,
    softmax,
    softmax_rows,
    stack,
    swapaxes,
    tanh,
    tape,
    transpose,
    tmax,
    tsum,
)
from .gradcheck import grad_check, grad_check_params
from .nn import Embedding, FeedForward, LayerNorm, Linear, Module, Parameter
from .optim import AdamW, adamw_step, clip_grad_norm
from .rng import Rng
