"""View-based molecule encoder.

A distance-biased transformer turns a molecule into per-atom features; a
two-branch query transformer then produces, depending on what it is fed,

* ``StructOnly``  K query states summarizing the molecule,
* ``TextOnly``    per-token text states (row 0 is ``[CLS]``),
* ``Fused``       K query states that also attended to a view prompt.

Both branches share self-attention weights and keep separate feed-forward
weights. Queries cross-attend to atom features in layers with even index.
Everything is batched: molecules are padded to the largest atom count and
texts to the longest sequence, with padding masked out of every softmax.
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import CapacityError, ContractError, InputError
from .mol import distances
from .tensor import (
    Embedding,
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    Parameter,
    Tensor,
    concat,
    debug_enabled,
    matmul,
    reshape,
    softmax,
    swapaxes,
    transpose,
)
from .text import PAD, TokenSequence


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    struct_layers: int = 2
    qformer_layers: int = 4
    K: int = 8
    max_text_len: int = 64
    n_atom_types: int = 8
    max_atoms: int = 32
    max_degree: int = 6
    gaussian_sigma: float = 1.0
    ffn_mult: int = 4
    init_std: float = 0.08

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise InputError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.K < 1:
            raise InputError("K must be at least 1")
        if self.qformer_layers < 2:
            raise InputError("qformer_layers must be at least 2")
        if self.gaussian_sigma <= 0:
            raise InputError("gaussian_sigma must be positive")


class Mode(Enum):
    STRUCT_ONLY = "StructOnly"
    TEXT_ONLY = "TextOnly"
    FUSED = "Fused"


@dataclass
class FusionOutput:
    mode: Mode
    query_states: Tensor = None   # (B, K, d)
    text_states: Tensor = None    # (B, L, d)
    text_mask: np.ndarray = None  # (B, L) bool

    @property
    def cls(self):
        if self.text_states is None:
            raise ContractError(f"{self.mode.value} output has no text states")
        return self.text_states[:, 0]


# -- batching -------------------------------------------------------------------
class MolBatch:
    """Padded molecule batch: atom/degree ids, masks, distance kernel, adjacency."""

    def __init__(self, molecules, cfg):
        molecules = list(molecules)
        if not molecules:
            raise InputError("empty molecule batch")
        n = max(m.n_atoms for m in molecules)
        if n > cfg.max_atoms:
            raise CapacityError(f"molecule with {n} atoms exceeds max_atoms={cfg.max_atoms}")
        b = len(molecules)
        self.molecules = molecules
        self.atoms = np.zeros((b, n), dtype=np.int64)
        self.degrees = np.zeros((b, n), dtype=np.int64)
        self.mask = np.zeros((b, n), dtype=bool)
        self.gauss = np.zeros((b, n, n))
        self.adj = np.zeros((b, n, n))
        two_s2 = 2.0 * cfg.gaussian_sigma ** 2
        for i, m in enumerate(molecules):
            k = m.n_atoms
            if max(m.atoms) >= cfg.n_atom_types:
                raise CapacityError(f"{m.id}: atom type {max(m.atoms)} outside alphabet of {cfg.n_atom_types}")
            self.atoms[i, :k] = m.atoms
            self.degrees[i, :k] = np.minimum(m.degrees(), cfg.max_degree)
            self.mask[i, :k] = True
            self.gauss[i, :k, :k] = np.exp(-distances(m) ** 2 / two_s2)
            self.adj[i, :k, :k] = m.adjacency()

    def __len__(self):
        return len(self.molecules)


class TextBatch:
    """Padded token-id batch; sequences may be empty (the empty view prompt)."""

    def __init__(self, seqs, max_len):
        seqs = [s if isinstance(s, TokenSequence) else TokenSequence(s) for s in seqs]
        if not seqs:
            raise InputError("empty text batch")
        L = max(len(s) for s in seqs)
        if L > max_len:
            raise CapacityError(f"text of {L} tokens exceeds max_text_len={max_len}")
        self.seqs = seqs
        self.ids = np.full((len(seqs), L), PAD, dtype=np.int64)
        self.mask = np.zeros((len(seqs), L), dtype=bool)
        for i, s in enumerate(seqs):
            self.ids[i, :len(s)] = s.ids
            self.mask[i, :len(s)] = True

    def __len__(self):
        return len(self.seqs)

    @property
    def all_empty(self):
        return self.ids.shape[1] == 0


# -- attention ------------------------------------------------------------------
class MultiHeadAttention(Module):
    def __init__(self, d, n_heads, rng, std=0.02):
        self.n_heads = n_heads
        self.wq = Linear(d, d, rng, std=std)
        self.wk = Linear(d, d, rng, std=std)
        self.wv = Linear(d, d, rng, std=std)
        self.wo = Linear(d, d, rng, std=std)

    def _split(self, x):
        b, n, d = x.shape
        return transpose(reshape(x, (b, n, self.n_heads, d // self.n_heads)), (0, 2, 1, 3))

    def __call__(self, x, memory=None, key_mask=None, bias=None, causal=False):
        """``key_mask`` is (B, Lk) with True for real keys; ``bias`` is (B, H, Lq, Lk)."""
        mem = x if memory is None else memory
        b, lq, d = x.shape
        lk = mem.shape[1]
        q, k, v = self._split(self.wq(x)), self._split(self.wk(mem)), self._split(self.wv(mem))
        scores = matmul(q, swapaxes(k, -1, -2)) * (1.0 / np.sqrt(d // self.n_heads))
        if bias is not None:
            scores = scores + bias
        mask = None
        if key_mask is not None:
            mask = np.broadcast_to(key_mask[:, None, None, :], (b, 1, lq, lk))
        if causal:
            tri = np.tril(np.ones((lq, lk), dtype=bool))[None, None]
            mask = tri if mask is None else mask & tri
        attn = softmax(scores, mask)
        if debug_enabled():
            rows = attn.data.sum(axis=-1)
            if not np.allclose(rows, 1.0, atol=1e-4):
                raise AssertionError("attention rows do not sum to one")
        out = transpose(matmul(attn, v), (0, 2, 1, 3))
        return self.wo(reshape(out, (b, lq, d)))


# -- structure encoder ------------------------------------------------------------
class StructLayer(Module):
    def __init__(self, cfg, rng):
        d, h = cfg.d_model, cfg.n_heads
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, h, rng, cfg.init_std)
        self.ln2 = LayerNorm(d)
        self.ffn = FeedForward(d, cfg.ffn_mult * d, rng, cfg.init_std)
        # per-head weights of the Gaussian distance kernel and of the bond indicator
        self.dist_weight = Parameter(np.ones(h))
        self.bond_weight = Parameter(np.zeros(h))

    def __call__(self, x, batch):
        h = self.n_heads
        bias = (reshape(self.dist_weight, (1, h, 1, 1)) * batch.gauss[:, None]
                + reshape(self.bond_weight, (1, h, 1, 1)) * batch.adj[:, None])
        x = x + self.attn(self.ln1(x), key_mask=batch.mask, bias=bias)
        return x + self.ffn(self.ln2(x))

    @property
    def n_heads(self):
        return self.attn.n_heads


class StructureEncoder(Module):
    """Atom-type plus degree embeddings through distance-biased attention blocks.

    There is no positional encoding, so the output is equivariant under atom
    relabeling, and only interatomic distances enter, so it is invariant
    under rigid motions of the coordinates.
    """

    def __init__(self, cfg, rng):
        d = cfg.d_model
        self.atom_embed = Embedding(cfg.n_atom_types, d, rng, cfg.init_std)
        self.degree_embed = Embedding(cfg.max_degree + 1, d, rng, cfg.init_std)
        self.layers = [StructLayer(cfg, rng) for _ in range(cfg.struct_layers)]
        self.ln_f = LayerNorm(d)

    def __call__(self, batch):
        x = self.atom_embed(batch.atoms) + self.degree_embed(batch.degrees)
        for layer in self.layers:
            x = layer(x, batch)
        return self.ln_f(x)


# -- query transformer ------------------------------------------------------------
class QueryLayer(Module):
    def __init__(self, cfg, rng, cross):
        d = cfg.d_model
        self.q_ln1 = LayerNorm(d)
        self.t_ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, cfg.n_heads, rng, cfg.init_std)
        self.cross = cross
        if cross:
            self.c_ln = LayerNorm(d)
            self.cross_attn = MultiHeadAttention(d, cfg.n_heads, rng, cfg.init_std)
        self.q_ln2 = LayerNorm(d)
        self.q_ffn = FeedForward(d, cfg.ffn_mult * d, rng, cfg.init_std)
        self.t_ln2 = LayerNorm(d)
        self.t_ffn = FeedForward(d, cfg.ffn_mult * d, rng, cfg.init_std)

    def __call__(self, q, t, text_mask, atoms, atom_mask):
        if q is not None and t is not None:
            k = q.shape[1]
            joint = concat([self.q_ln1(q), self.t_ln1(t)], axis=1)
            keys = np.concatenate([np.ones((q.shape[0], k), dtype=bool), text_mask], axis=1)
            out = self.attn(joint, key_mask=keys)
            q = q + out[:, :k]
            t = t + out[:, k:]
        elif q is not None:
            q = q + self.attn(self.q_ln1(q))
        else:
            t = t + self.attn(self.t_ln1(t), key_mask=text_mask)
        if q is not None:
            if self.cross:
                q = q + self.cross_attn(self.c_ln(q), memory=atoms, key_mask=atom_mask)
            q = q + self.q_ffn(self.q_ln2(q))
        if t is not None:
            t = t + self.t_ffn(self.t_ln2(t))
        return q, t


class ViewEncoder(Module):
    def __init__(self, cfg, rng):
        d = cfg.d_model
        self.cfg = cfg
        self.structure = StructureEncoder(cfg, rng.split(0))
        qrng = rng.split(1)
        self.queries = Parameter(qrng.trunc_normal((cfg.K, d), cfg.init_std))
        self.token_embed = Embedding(cfg.vocab_size, d, qrng, cfg.init_std)
        self.pos_embed = Parameter(qrng.trunc_normal((cfg.max_text_len, d), cfg.init_std))
        self.layers = [QueryLayer(cfg, qrng, cross=(i % 2 == 0)) for i in range(cfg.qformer_layers)]
        self.q_ln_f = LayerNorm(d)
        self.t_ln_f = LayerNorm(d)

    # batching helpers accept raw lists or prebuilt batches
    def mol_batch(self, molecules):
        return molecules if isinstance(molecules, MolBatch) else MolBatch(molecules, self.cfg)

    def text_batch(self, seqs):
        return seqs if isinstance(seqs, TextBatch) else TextBatch(seqs, self.cfg.max_text_len)

    def encode_structure(self, molecules):
        """Atom features (B, N, d) with the atom mask (B, N)."""
        batch = self.mol_batch(molecules)
        return self.structure(batch), batch.mask

    def _embed_text(self, tb):
        L = tb.ids.shape[1]
        return self.token_embed(tb.ids) + self.pos_embed[:L]

    def _run(self, q, t, text_mask, atoms, atom_mask):
        for layer in self.layers:
            q, t = layer(q, t, text_mask, atoms, atom_mask)
        return (None if q is None else self.q_ln_f(q)), (None if t is None else self.t_ln_f(t))

    def _queries(self, b):
        return reshape(self.queries, (1,) + self.queries.shape) + np.zeros((b, 1, 1))

    def forward_struct(self, molecules):
        mb = self.mol_batch(molecules)
        atoms, amask = self.encode_structure(mb)
        q, _ = self._run(self._queries(len(mb)), None, None, atoms, amask)
        return FusionOutput(Mode.STRUCT_ONLY, query_states=q)

    def forward_text(self, seqs):
        tb = self.text_batch(seqs)
        if tb.all_empty or not tb.mask[:, 0].all():
            raise InputError("text-only encoding needs non-empty sequences")
        _, t = self._run(None, self._embed_text(tb), tb.mask, None, None)
        return FusionOutput(Mode.TEXT_ONLY, text_states=t, text_mask=tb.mask)

    def forward_fused(self, molecules, seqs):
        """Queries and prompt tokens share self-attention; queries also read the atoms.

        When every prompt is empty this is exactly the structure-only pass.
        """
        mb, tb = self.mol_batch(molecules), self.text_batch(seqs)
        if len(mb) != len(tb):
            raise InputError(f"{len(mb)} molecules but {len(tb)} prompts")
        if tb.all_empty:
            out = self.forward_struct(mb)
            empty = Tensor(np.zeros((len(mb), 0, self.cfg.d_model), dtype=out.query_states.dtype))
            return FusionOutput(Mode.FUSED, out.query_states, empty, tb.mask)
        atoms, amask = self.encode_structure(mb)
        q, t = self._run(self._queries(len(mb)), self._embed_text(tb), tb.mask, atoms, amask)
        return FusionOutput(Mode.FUSED, query_states=q, text_states=t, text_mask=tb.mask)
