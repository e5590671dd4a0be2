"""The compiled kernels agree with the numpy reference on random inputs."""
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvmol.tensor import Tensor, backward, kernels, tsum
from mvmol.tensor import _kernels_py as py

ck = pytest.importorskip("mvmol.tensor._ckernels")

shapes = st.tuples(st.integers(1, 12), st.integers(1, 40))
dtypes = st.sampled_from([np.float32, np.float64])


def _tol(dtype):
    return dict(rtol=2e-5, atol=2e-6) if dtype == np.float32 else dict(rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(shapes, dtypes, st.integers(0, 2**31 - 1))
def test_softmax_parity(shape, dtype, seed):
    g = np.random.default_rng(seed)
    x = (g.normal(size=shape) * 5).astype(dtype)
    mask = (g.random(shape) > 0.3).astype(np.uint8)
    mask[:, 0] = 1
    for m in (None, mask):
        (y1, ok1), (y2, ok2) = py.softmax_fwd(x, m), ck.softmax_fwd(x, m)
        assert ok1 and ok2
        np.testing.assert_allclose(y1, y2, **_tol(dtype))
    gr = g.normal(size=shape).astype(dtype)
    np.testing.assert_allclose(py.softmax_bwd(y1, gr), ck.softmax_bwd(y1, gr), **_tol(dtype))


def test_softmax_degenerate_flag_agrees():
    x = np.zeros((2, 3), np.float32)
    mask = np.array([[1, 0, 0], [0, 0, 0]], np.uint8)
    assert py.softmax_fwd(x, mask)[1] is False
    assert ck.softmax_fwd(x, mask)[1] is False


@settings(max_examples=30, deadline=None)
@given(shapes, dtypes, st.integers(0, 2**31 - 1))
def test_layernorm_parity(shape, dtype, seed):
    g = np.random.default_rng(seed)
    x = (g.normal(size=shape) * 3 + 1).astype(dtype)
    gain, bias = g.normal(size=shape[1]).astype(dtype), g.normal(size=shape[1]).astype(dtype)
    a, b = py.layernorm_fwd(x, gain, bias, 1e-5), ck.layernorm_fwd(x, gain, bias, 1e-5)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, **_tol(dtype))
    gr = g.normal(size=shape).astype(dtype)
    for u, v in zip(py.layernorm_bwd(gr, a[1], a[2], gain), ck.layernorm_bwd(gr, a[1], a[2], gain)):
        np.testing.assert_allclose(u, v, rtol=1e-4 if dtype == np.float32 else 1e-10, atol=1e-4 if dtype == np.float32 else 1e-10)


@settings(max_examples=30, deadline=None)
@given(shapes, dtypes, st.integers(0, 2**31 - 1))
def test_gelu_parity(shape, dtype, seed):
    g = np.random.default_rng(seed)
    x = (g.normal(size=shape) * 4).astype(dtype)
    gr = g.normal(size=shape).astype(dtype)
    np.testing.assert_allclose(py.gelu_fwd(x), ck.gelu_fwd(x), **_tol(dtype))
    tol = dict(rtol=1e-4, atol=1e-5) if dtype == np.float32 else _tol(dtype)
    np.testing.assert_allclose(py.gelu_bwd(x, gr), ck.gelu_bwd(x, gr), **tol)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**31 - 1))
def test_pairwise_distance_parity(n, seed):
    c = np.random.default_rng(seed).normal(size=(n, 3))
    np.testing.assert_allclose(py.pairwise_distances(c), ck.pairwise_distances(c), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 200), dtypes, st.integers(0, 2**31 - 1), st.floats(0, 0.1))
def test_adamw_parity(n, dtype, seed, wd):
    g = np.random.default_rng(seed)
    bufs = [g.normal(size=n).astype(dtype) for _ in range(2)] + [g.random(n).astype(dtype) * 0.1 for _ in range(2)]
    a = [b.copy() for b in bufs]
    b = [x.copy() for x in bufs]
    args = (1e-3, 0.9, 0.999, 1e-8, wd, 0.19, 0.002)
    py.adamw_update(a[0], a[1], a[2], a[3], *args)
    ck.adamw_update(b[0], b[1], b[2], b[3], *args)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=1e-5 if dtype == np.float32 else 1e-12, atol=1e-7)


def test_backend_switching_changes_the_binding_and_agrees_end_to_end():
    g = np.random.default_rng(0)
    x0 = g.normal(size=(6, 10)).astype(np.float32)
    w = g.normal(size=(6, 10)).astype(np.float32)
    from mvmol.tensor import gelu, layer_norm, softmax

    results = {}
    try:
        for backend in kernels.available_backends():
            kernels.use_backend(backend)
            assert kernels.BACKEND == backend
            x = Tensor(x0.copy(), requires_grad=True)
            gain, bias = Tensor(np.ones(10, np.float32), requires_grad=True), Tensor(np.zeros(10, np.float32))
            y = softmax(gelu(layer_norm(x, gain, bias)))
            backward(tsum(y * w))
            results[backend] = (y.data.copy(), x.grad.copy())
    finally:
        kernels.use_backend("auto")
    ref = results["python"]
    for backend, (y, gx) in results.items():
        np.testing.assert_allclose(y, ref[0], rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(gx, ref[1], rtol=1e-4, atol=1e-5)
    assert kernels.softmax_bwd is ck.softmax_bwd
    assert kernels.gelu_fwd is py.gelu_fwd


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")


def test_env_var_forces_numpy_fallback():
    env = dict(os.environ, MVMOL_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from mvmol.tensor import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
