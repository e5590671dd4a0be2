"""The full model: encoder, projection and matching heads, decoder, vocab."""
from dataclasses import asdict, dataclass, fields

import numpy as np

from .decoder import DecoderConfig, TextDecoder
from .encoder import EncoderConfig, ViewEncoder
from .errors import CapacityError, InputError
from .mol import DEFAULT_ATOM_TYPES, to_linear
from .tensor import Embedding, Linear, Module, Parameter, Rng, l2_normalize, mean, tsum
from .text import build_vocab, encode, Vocab


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    struct_layers: int = 2
    qformer_layers: int = 4
    K: int = 8
    max_text_len: int = 64
    n_atom_types: int = DEFAULT_ATOM_TYPES
    max_atoms: int = 32
    max_degree: int = 6
    gaussian_sigma: float = 1.0
    decoder_layers: int = 2
    max_gen_len: int = 64
    max_serial_len: int = 96
    d_proj: int = 32
    init_std: float = 0.08
    seed: int = 0

    def encoder_config(self, vocab_size):
        return EncoderConfig(
            vocab_size=vocab_size, d_model=self.d_model, n_heads=self.n_heads,
            struct_layers=self.struct_layers, qformer_layers=self.qformer_layers, K=self.K,
            max_text_len=self.max_text_len, n_atom_types=self.n_atom_types, max_atoms=self.max_atoms,
            max_degree=self.max_degree, gaussian_sigma=self.gaussian_sigma, init_std=self.init_std,
        )

    def decoder_config(self, vocab_size):
        return DecoderConfig(vocab_size=vocab_size, d_model=self.d_model, n_heads=self.n_heads,
                             layers=self.decoder_layers, max_gen_len=self.max_gen_len,
                             init_std=self.init_std)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def model_vocab(texts, molecules=(), n_atom_types=DEFAULT_ATOM_TYPES, extra=()):
    """Vocab over corpus texts plus every token the linear molecule notation can emit."""
    notation = [" ".join(f"a{t}" for t in range(n_atom_types)), "| -",
                " ".join(str(i) for i in range(128))]
    serial = [to_linear(m) for m in molecules]
    return build_vocab(list(texts) + list(extra) + notation + serial)


class MVMol(Module):
    def __init__(self, vocab, cfg=None):
        cfg = cfg or ModelConfig()
        if not isinstance(vocab, Vocab):
            raise InputError("MVMol needs a Vocab")
        self.cfg = cfg
        self.vocab = vocab
        rng = Rng(cfg.seed)
        V = len(vocab)
        self.encoder = ViewEncoder(cfg.encoder_config(V), rng.split(0))
        hrng = rng.split(1)
        self.proj = Linear(cfg.d_model, cfg.d_proj, hrng, std=cfg.init_std)
        self.match_head = Linear(cfg.d_model, 2, hrng, std=cfg.init_std)
        self.decoder = TextDecoder(cfg.decoder_config(V), rng.split(2))
        srng = rng.split(3)
        self.serial_embed = Embedding(V, cfg.d_model, srng, cfg.init_std)
        self.serial_pos = Parameter(srng.trunc_normal((cfg.max_serial_len, cfg.d_model), cfg.init_std))

    # -- heads --------------------------------------------------------------------
    def project(self, states):
        """Fully-connected layer to d_proj, then unit-normalize the last axis."""
        return l2_normalize(self.proj(states))

    def match_logits(self, states, mask=None):
        """Average-pool state rows (respecting ``mask``) and map to two logits."""
        if mask is None:
            pooled = mean(states, axis=1)
        else:
            w = mask.astype(np.float64)
            w = w / w.sum(axis=1, keepdims=True)
            pooled = tsum(states * w[:, :, None], axis=1)
        return self.match_head(pooled)

    # -- text helpers -------------------------------------------------------------
    def tokens(self, text, max_len=None):
        return encode(text, self.vocab, max_len=max_len or self.cfg.max_text_len)

    def serial_states(self, molecules):
        """Embedded linear serializations, padded: ((B, S, d), mask (B, S))."""
        seqs = [[self.vocab.id(t) for t in to_linear(m).split()] for m in molecules]
        S = max(len(s) for s in seqs)
        if S > self.cfg.max_serial_len:
            raise CapacityError(f"serialization of {S} tokens exceeds max_serial_len={self.cfg.max_serial_len}")
        ids = np.zeros((len(seqs), S), dtype=np.int64)
        mask = np.zeros((len(seqs), S), dtype=bool)
        for i, s in enumerate(seqs):
            ids[i, :len(s)] = s
            mask[i, :len(s)] = True
        return self.serial_embed(ids) + self.serial_pos[:S], mask
