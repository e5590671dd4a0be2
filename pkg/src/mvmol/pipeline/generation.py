"""Text generation from molecules, molecules from text, and tail completion."""
import numpy as np

from ..errors import InputError
from ..mol import is_valid_linear, to_linear
from ..objectives import as_target, decoder_memory, lm_loss, relation_transform
from ..tensor import Rng, concat, no_grad
from ..text import decode, encode, encode_prompt
from .presets import RETRIEVAL_PROMPT
from .train import _epoch_batches, _Loop


# -- captioning ---------------------------------------------------------------------
def caption_memory(model, molecules, prompt=RETRIEVAL_PROMPT):
    """Fused query states followed by the embedded linear serialization, with a key mask."""
    seq = encode_prompt(prompt, model.vocab, model.cfg.max_text_len)
    q = model.encoder.forward_fused(molecules, [seq] * len(molecules)).query_states
    serial, smask = model.serial_states(molecules)
    mask = np.concatenate([np.ones(q.shape[:2], dtype=bool), smask], axis=1)
    return concat([q, serial], axis=1), mask


def _text_targets(model, texts):
    limit = model.cfg.max_gen_len
    return [as_target(encode(t, model.vocab, max_len=limit), limit) for t in texts]


def _decode_all(model, seqs):
    return [decode(s, model.vocab) for s in seqs]


def caption(model, molecules, prompt=RETRIEVAL_PROMPT, max_len=None):
    """Greedy captions, one string per molecule."""
    with no_grad():
        memory, mask = caption_memory(model, list(molecules), prompt)
        return _decode_all(model, model.decoder.generate(memory, mask, max_len))


def _fit(model, n, batch_fn, cfg, tag, out_dir=None):
    if n == 0:
        raise InputError(f"{tag} needs at least one training pair")
    batches = _epoch_batches(n, cfg.batch_size, Rng(cfg.seed, (4,)).split(0))
    loop = _Loop(model, cfg, out_dir, tag)
    for step in range(cfg.steps):
        loss = batch_fn(next(batches))
        loop.step(step, loss, {})
    return loop.finish()


def train_captioning(model, pairs, cfg, prompt=RETRIEVAL_PROMPT, out_dir=None):
    """Teacher-forced caption training on ``(Molecule, text)`` pairs."""
    mols = [m for m, _ in pairs]
    targets = _text_targets(model, [t for _, t in pairs])

    def batch(idx):
        memory, mask = caption_memory(model, [mols[i] for i in idx], prompt)
        return lm_loss(model, memory, mask, [targets[i] for i in idx])

    return _fit(model, len(mols), batch, cfg, "caption", out_dir)


# -- text to molecule ---------------------------------------------------------------
def text_memory(model, texts):
    out = model.encoder.forward_text([model.tokens(t) for t in texts])
    return out.text_states, out.text_mask


def _linear_targets(model, molecules):
    limit = model.cfg.max_gen_len
    seqs = []
    for m in molecules:
        s = to_linear(m)
        seq = encode(s, model.vocab, max_len=limit)
        seqs.append(as_target(seq, limit))
    return seqs


def generate_molecule(model, texts, max_len=None):
    """Greedy linear-notation strings decoded from text-only states."""
    with no_grad():
        memory, mask = text_memory(model, list(texts))
        return _decode_all(model, model.decoder.generate(memory, mask, max_len))


def validity_rate(strings):
    strings = list(strings)
    if not strings:
        raise InputError("no generated strings to score")
    return float(np.mean([is_valid_linear(s) for s in strings]))


def train_text2mol(model, pairs, cfg, out_dir=None):
    """Teacher-forced training on ``(text, Molecule)`` pairs."""
    texts = [t for t, _ in pairs]
    targets = _linear_targets(model, [m for _, m in pairs])

    def batch(idx):
        memory, mask = text_memory(model, [texts[i] for i in idx])
        return lm_loss(model, memory, mask, [targets[i] for i in idx])

    return _fit(model, len(texts), batch, cfg, "text2mol", out_dir)


# -- tail completion --------------------------------------------------------------------
def complete_tails(model, enc, max_len=None):
    """Greedy tail texts for an encoded MolText or TextText triplet batch."""
    with no_grad():
        memory, mask = decoder_memory(relation_transform(model, enc.heads, enc.relations))
        return model.decoder.generate(memory, mask, max_len)


def tail_exact_match(model, enc, max_len=None):
    """Fraction of triplets whose greedy tail equals the stored tail tokens."""
    got = complete_tails(model, enc, max_len)
    want = [as_target(t, model.cfg.max_gen_len).ids[1:-1] for t in enc.tails]
    return float(np.mean([tuple(g.ids) == tuple(w) for g, w in zip(got, want)]))


__all__ = [
    "caption", "caption_memory", "complete_tails", "generate_molecule", "tail_exact_match",
    "text_memory", "train_captioning", "train_text2mol", "validity_rate",
]
