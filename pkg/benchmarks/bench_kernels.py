"""Compare the numpy, compiled and mixed kernel backends.

Two tables are printed: per-kernel timings on shapes typical of the desk
configuration (attention rows, hidden activations, a few hundred thousand
optimizer entries), and the wall time of one stage-1 training step
(forward, backward, AdamW) under each backend.

    python benchmarks/bench_kernels.py [--repeat 20] [--steps 5] [--json out.json]
"""
import argparse
import json
import time
import timeit

import numpy as np

from mvmol.tensor import _kernels_py, kernels

try:
    from mvmol.tensor import _ckernels
except ImportError:
    _ckernels = None


def kernel_cases(rng):
    f32 = np.float32
    att = rng.normal(size=(4096, 40)).astype(f32)
    mask = (rng.random((4096, 40)) > 0.2).astype(np.uint8)
    mask[:, 0] = 1
    soft, _ = _kernels_py.softmax_fwd(att, mask)
    g_att = rng.normal(size=att.shape).astype(f32)
    hid = rng.normal(size=(2048, 64)).astype(f32)
    gain, bias = np.ones(64, f32), np.zeros(64, f32)
    _, xhat, rstd = _kernels_py.layernorm_fwd(hid, gain, bias, 1e-5)
    ffn = rng.normal(size=(2048, 256)).astype(f32)
    g_ffn = rng.normal(size=ffn.shape).astype(f32)
    coords = rng.normal(size=(32, 3))
    n = 200_000
    p, g = rng.normal(size=n).astype(f32), rng.normal(size=n).astype(f32)
    m, v = np.zeros(n, f32), np.zeros(n, f32)
    return {
        "softmax_fwd": lambda k: k.softmax_fwd(att, mask),
        "softmax_bwd": lambda k: k.softmax_bwd(soft, g_att),
        "layernorm_fwd": lambda k: k.layernorm_fwd(hid, gain, bias, 1e-5),
        "layernorm_bwd": lambda k: k.layernorm_bwd(hid, xhat, rstd, gain),
        "gelu_fwd": lambda k: k.gelu_fwd(ffn),
        "gelu_bwd": lambda k: k.gelu_bwd(ffn, g_ffn),
        "pairwise_distances": lambda k: k.pairwise_distances(coords),
        "adamw_update": lambda k: k.adamw_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.05, 0.1, 0.001),
    }


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    backends = {"python": _kernels_py}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    rows = {}
    for name, fn in cases.items():
        rows[name] = {}
        for label, mod in backends.items():
            fn(mod)  # warm up
            rows[name][label] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=repeat)) * 1e3
        if _ckernels is not None:
            rows[name]["auto"] = rows[name]["python" if name in kernels._NUMPY_FASTER else "cython"]
    return rows


def bench_steps(steps):
    from mvmol.model import MVMol, model_vocab
    from mvmol.objectives import stage1_loss
    from mvmol.synth import CorpusSpec, generate_corpus
    from mvmol.tensor import AdamW, Rng, backward

    corpus = generate_corpus(CorpusSpec(n_molecules=16, seed=0))
    pairs = corpus.stage1_pairs()
    out = {}
    for backend in kernels.available_backends():
        kernels.use_backend(backend)
        model = MVMol(model_vocab(corpus.all_texts(), corpus.molecules))
        mols = [m for m, _ in pairs]
        seqs = [model.tokens(t) for _, t in pairs]
        opt = AdamW(model.named_parameters(), lr=1e-3, weight_decay=0.05)
        rng = Rng(0, (1,))
        times = []
        for _ in range(steps + 1):
            t0 = time.perf_counter()
            loss, _ = stage1_loss(model, mols, seqs, rng)
            opt.zero_grad()
            backward(loss)
            opt.step(1e-3)
            times.append(time.perf_counter() - t0)
        out[backend] = float(np.median(times[1:])) * 1e3
    kernels.use_backend("auto" if _ckernels is not None else "python")
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--steps", type=int, default=5)
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled kernels not built; only the numpy backend is timed")

    rows = bench_kernels(args.repeat)
    labels = list(next(iter(rows.values())))
    print(f"{'kernel (ms, best of %d)' % args.repeat:28s}" + "".join(f"{b:>10s}" for b in labels))
    for name, r in rows.items():
        print(f"{name:28s}" + "".join(f"{r[b]:10.3f}" for b in labels))

    step = bench_steps(args.steps)
    print(f"\n{'stage-1 step, B=16 (ms)':28s}" + "".join(f"{b:>10s}" for b in step))
    print(f"{'median':28s}" + "".join(f"{t:10.1f}" for t in step.values()))
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump({"kernels_ms": rows, "stage1_step_ms": step}, fh, indent=2)


if __name__ == "__main__":
    main()
