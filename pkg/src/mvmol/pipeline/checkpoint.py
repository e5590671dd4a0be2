"""Binary checkpoints.

Layout (all integers u32 little-endian)::

    b"MVML1\\n"
    u32 blob length, UTF-8 JSON blob (model config, vocab, extra metadata)
    u32 tensor count
    per tensor: u32 name length, UTF-8 name, u32 ndim, u32 dims..., float32 LE payload

The JSON blob is written with sorted keys and fixed separators, and tensors
in parameter order, so save -> load -> save reproduces the file byte for byte.
"""
import json
import os
import struct

import numpy as np

from ..errors import CheckpointError
from ..model import ModelConfig, MVMol
from ..text import Vocab

MAGIC = b"MVML1\n"


def _blob(model, extra):
    meta = {"model": model.cfg.to_dict(), "vocab": list(model.vocab.itos), "extra": extra or {}}
    return json.dumps(meta, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def save_checkpoint(path, model, extra=None):
    parts = [MAGIC]
    blob = _blob(model, extra)
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    named = model.named_parameters()
    parts.append(struct.pack("<I", len(named)))
    for name, p in named:
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<I", p.ndim))
        parts.append(struct.pack(f"<{p.ndim}I", *p.shape))
        parts.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u32s(self, count):
        return struct.unpack(f"<{count}I", self.take(4 * count))


def read_checkpoint(path):
    """Return ``(meta, tensors)`` where tensors maps names to float32 arrays in file order."""
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    try:
        meta = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt config blob ({exc})") from None
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        dims = r.u32s(r.u32())
        n = int(np.prod(dims)) if dims else 1
        tensors[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(buf):
        raise CheckpointError(f"{path}: trailing bytes after the last tensor")
    return meta, tensors


def load_checkpoint(path, expect_config=None):
    """Rebuild the model stored at ``path``.

    With ``expect_config`` the stored model config must match it; tensor
    names must match the rebuilt model exactly.
    """
    meta, tensors = read_checkpoint(path)
    cfg = ModelConfig.from_dict(meta["model"])
    if expect_config is not None and cfg != expect_config:
        raise CheckpointError("checkpoint was written for a different model config")
    model = MVMol(Vocab(meta["vocab"]), cfg)
    try:
        model.load_state_dict(tensors, strict=True)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    return model, meta.get("extra", {})


def load_weights_into(model, path):
    """Load tensors from ``path`` into an existing model with the same parameter names."""
    _, tensors = read_checkpoint(path)
    try:
        model.load_state_dict(tensors, strict=True)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    return model
