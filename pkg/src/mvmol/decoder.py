"""Causal text decoder with cross-attention to encoder states."""
from dataclasses import dataclass

import numpy as np

from .encoder import MultiHeadAttention
from .errors import CapacityError, InputError
from .tensor import Embedding, FeedForward, LayerNorm, Linear, Module, Parameter, no_grad
from .text import BOS, EOS, PAD, TokenSequence


@dataclass(frozen=True)
class DecoderConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    layers: int = 2
    max_gen_len: int = 64
    ffn_mult: int = 4
    init_std: float = 0.08

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise InputError("decoder d_model must be divisible by n_heads")
        if self.max_gen_len < 1:
            raise InputError("max_gen_len must be positive")


class DecoderLayer(Module):
    def __init__(self, cfg, rng):
        d = cfg.d_model
        self.ln1 = LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, cfg.n_heads, rng, cfg.init_std)
        self.ln2 = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, cfg.n_heads, rng, cfg.init_std)
        self.ln3 = LayerNorm(d)
        self.ffn = FeedForward(d, cfg.ffn_mult * d, rng, cfg.init_std)

    def __call__(self, x, memory, memory_mask):
        x = x + self.self_attn(self.ln1(x), causal=True)
        x = x + self.cross_attn(self.ln2(x), memory=memory, key_mask=memory_mask)
        return x + self.ffn(self.ln3(x))


class TextDecoder(Module):
    def __init__(self, cfg, rng):
        d = cfg.d_model
        self.cfg = cfg
        self.token_embed = Embedding(cfg.vocab_size, d, rng, cfg.init_std)
        self.pos_embed = Parameter(rng.trunc_normal((cfg.max_gen_len, d), cfg.init_std))
        self.layers = [DecoderLayer(cfg, rng) for _ in range(cfg.layers)]
        self.ln_f = LayerNorm(d)
        self.head = Linear(d, cfg.vocab_size, rng, std=cfg.init_std)

    def forward_teacher(self, memory, memory_mask, input_ids):
        """Logits (B, T, vocab); row t depends only on ``input_ids[:, :t+1]`` and memory."""
        input_ids = np.asarray(input_ids, dtype=np.int64)
        T = input_ids.shape[1]
        if T > self.cfg.max_gen_len:
            raise CapacityError(f"target of {T} tokens exceeds max_gen_len={self.cfg.max_gen_len}")
        if memory.shape[0] != input_ids.shape[0]:
            raise InputError("memory and target batch sizes differ")
        x = self.token_embed(input_ids) + self.pos_embed[:T]
        for layer in self.layers:
            x = layer(x, memory, memory_mask)
        return self.head(self.ln_f(x))

    def generate(self, memory, memory_mask=None, max_len=None):
        """Greedy argmax rollout from [BOS] until [EOS] or ``max_len`` tokens.

        Returns one :class:`TokenSequence` per batch row, without [BOS] and
        without the trailing [EOS].
        """
        max_len = self.cfg.max_gen_len - 1 if max_len is None else max_len
        if max_len > self.cfg.max_gen_len - 1:
            raise CapacityError(f"max_len={max_len} exceeds max_gen_len-1={self.cfg.max_gen_len - 1}")
        b = memory.shape[0]
        ids = np.full((b, 1), BOS, dtype=np.int64)
        done = np.zeros(b, dtype=bool)
        with no_grad():
            for _ in range(max_len):
                logits = self.forward_teacher(memory, memory_mask, ids).data[:, -1]
                nxt = np.where(done, PAD, logits.argmax(axis=-1))
                ids = np.concatenate([ids, nxt[:, None]], axis=1)
                done |= nxt == EOS
                if done.all():
                    break
        out = []
        for row in ids[:, 1:]:
            toks = []
            for t in row:
                if t in (EOS, PAD):
                    break
                toks.append(int(t))
            out.append(TokenSequence(toks))
        return out
