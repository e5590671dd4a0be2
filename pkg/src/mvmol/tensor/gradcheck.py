"""Central finite-difference gradient checks (run in float64)."""
import numpy as np

from . import core


def grad_check(f, x, h=1e-4, max_coords=None, rng=None):
    """Max relative error between analytic and numeric gradients of ``f`` at ``x``.

    The error per coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    ``f`` maps a Tensor to a scalar Tensor. With ``max_coords`` only a random
    subset of coordinates is probed.
    """
    x.requires_grad = True
    x.grad = None
    core.backward(f(x))
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    return _compare(lambda: f(x), x, analytic, h, max_coords, rng)


def grad_check_params(loss_fn, named_params, h=1e-4, max_coords=None, rng=None):
    """Gradient check of a closure ``loss_fn()`` w.r.t. several parameters.

    Returns ``{name: max rel err}``.
    """
    params = [p for _, p in named_params]
    for p in params:
        p.grad = None
    core.backward(loss_fn())
    analytic = {id(p): (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for p in params}
    return {n: _compare(loss_fn, p, analytic[id(p)], h, max_coords, rng) for n, p in named_params}


def _compare(evaluate, x, analytic, h, max_coords, rng):
    flat = x.data.reshape(-1)
    n = flat.size
    if max_coords is not None and n > max_coords:
        gen = getattr(rng, "gen", rng) if rng is not None else np.random.default_rng(0)
        coords = np.sort(gen.choice(n, size=max_coords, replace=False))
    else:
        coords = np.arange(n)
    a_flat = analytic.reshape(-1)
    worst = 0.0
    with core.no_grad():
        for i in coords:
            old = flat[i]
            flat[i] = old + h
            fp = float(evaluate().data)
            flat[i] = old - h
            fm = float(evaluate().data)
            flat[i] = old
            num = (fp - fm) / (2.0 * h)
            err = abs(a_flat[i] - num) / max(1.0, abs(a_flat[i]))
            worst = max(worst, err)
    return worst
