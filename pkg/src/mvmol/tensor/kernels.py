"""Backend selection for the fused kernels.

Three backends exist. ``cython`` binds every compiled kernel, ``python``
binds the numpy versions, and ``auto`` (the default when the extension
imports) takes each kernel from whichever was faster in
``benchmarks/bench_kernels.py``. GELU, the forward softmax and the AdamW
update stay on numpy there: their bodies are elementwise transcendentals or
divisions, where numpy's vectorized loops beat a scalar compiled loop. The
row reductions (softmax backward, layer norm) and pairwise distances use
the compiled versions.

Set ``MVMOL_PURE_PYTHON=1`` to force the numpy fallback. :func:`use_backend`
switches at runtime (used by the parity tests and the benchmark).
"""
import os

from . import _kernels_py

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_NAMES = (
    "softmax_fwd",
    "softmax_bwd",
    "layernorm_fwd",
    "layernorm_bwd",
    "gelu_fwd",
    "gelu_bwd",
    "pairwise_distances",
    "adamw_update",
)

_NUMPY_FASTER = frozenset({"gelu_fwd", "gelu_bwd", "softmax_fwd", "adamw_update"})

BACKEND = "python"


def available_backends():
    return ["python"] + (["cython", "auto"] if _ckernels is not None else [])


def use_backend(name):
    """Bind the module-level kernel names to ``name`` ("auto", "cython" or "python")."""
    global BACKEND
    if name not in ("auto", "cython", "python"):
        raise ValueError(f"unknown backend {name!r}")
    if name != "python" and _ckernels is None:
        raise RuntimeError("compiled kernels are not built; reinstall the package")
    g = globals()
    for n in _NAMES:
        compiled = name == "cython" or (name == "auto" and n not in _NUMPY_FASTER)
        g[n] = getattr(_ckernels if compiled else _kernels_py, n)
    BACKEND = name


use_backend("auto" if _ckernels is not None and os.environ.get("MVMOL_PURE_PYTHON") != "1" else "python")
