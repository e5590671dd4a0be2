"""Finite-difference checks of every training loss on a tiny double-precision model."""
import time

import numpy as np

from ..kg import TripletCategory, resolve_batch
from ..model import ModelConfig, MVMol, model_vocab
from ..objectives import (
    encode_tails,
    encode_triplets,
    loss_cmc,
    loss_cmm,
    loss_kgc,
    loss_kge_c,
    loss_kge_m,
    mine_hard_negatives,
    relation_transform,
    triplet_scores,
)
from ..synth import CorpusSpec, generate_corpus
from ..tensor import Rng, backward, default_dtype, grad_check_params, no_grad

TINY = ModelConfig(d_model=8, n_heads=2, struct_layers=1, qformer_layers=2, K=2, max_text_len=40,
                   decoder_layers=1, max_gen_len=40, d_proj=4, max_atoms=12, seed=3)


def tiny_setup(batch=3, seed=0):
    """A float64 model plus matching molecules, texts and a small KG."""
    corpus = generate_corpus(CorpusSpec(n_molecules=max(batch, 12), atoms_min=3, atoms_max=6, seed=seed))
    vocab = model_vocab(corpus.all_texts(), corpus.molecules)
    with default_dtype(np.float64):
        model = MVMol(vocab, TINY)
    return model, corpus


def _batches(model, corpus, batch):
    kg = corpus.kg()
    out = {}
    for cat in TripletCategory:
        trips = kg.by_category(cat)[:batch]
        if len(trips) == batch:
            out[cat] = encode_triplets(model, resolve_batch(kg, trips))
    return out


def loss_closures(model, corpus, batch=3, seed=0):
    """``{name: zero-arg loss function}`` with negatives mined once up front."""
    rng = Rng(seed, (9,))
    pairs = corpus.stage1_pairs()[:batch]
    mols = [m for m, _ in pairs]
    texts = [model.tokens(t) for _, t in pairs]
    enc = model.encoder
    trip = _batches(model, corpus, batch)
    mt = trip[TripletCategory.MOL_TEXT]

    with no_grad():
        _, scores = loss_cmc(model, enc.forward_struct(mols).query_states, enc.forward_text(texts).text_states)
        neg_t, neg_m = mine_hard_negatives(scores.data, rng)
        zhr = relation_transform(model, mt.heads, mt.relations)
        kscores = triplet_scores(model, zhr, encode_tails(model, mt), mt.category)
        kneg_t, kneg_h = mine_hard_negatives(kscores.data, rng)

    closures = {
        "cmc": lambda: loss_cmc(model, enc.forward_struct(mols).query_states,
                                enc.forward_text(texts).text_states)[0],
        "cmm": lambda: loss_cmm(model, mols, texts, neg_t, neg_m),
        "kge_c": lambda: loss_kge_c(model, mt)[0],
        "kge_m": lambda: loss_kge_m(model, mt, kneg_t, kneg_h),
        "kgc": lambda: loss_kgc(model, mt),
    }
    if TripletCategory.MOL_MOL in trip:
        mm = trip[TripletCategory.MOL_MOL]
        closures["kge_c_molmol"] = lambda: loss_kge_c(model, mm)[0]
    if TripletCategory.TEXT_TEXT in trip:
        tt = trip[TripletCategory.TEXT_TEXT]
        closures["kge_c_texttext"] = lambda: loss_kge_c(model, tt)[0]
        closures["kgc_texttext"] = lambda: loss_kgc(model, tt)
    return closures


def run_grad_suite(batch=3, seed=0, max_coords=6, names=None, h=1e-5):
    """Max relative gradient error per loss over all parameters that receive gradient.

    Each parameter tensor is probed at ``max_coords`` random coordinates.
    The step defaults to 1e-5: contrastive scores are divided by a small
    temperature, which makes the loss sharply curved, and at 1e-4 the
    central difference's own O(h^2) truncation error already reaches 1e-4
    on some coordinates.
    Returns ``({loss: max err}, seconds)``.
    """
    t0 = time.time()
    with default_dtype(np.float64):
        model, corpus = tiny_setup(batch, seed)
        closures = loss_closures(model, corpus, batch, seed)
        out = {}
        params = model.named_parameters()
        for name, fn in closures.items():
            if names is not None and name not in names:
                continue
            model.zero_grad()
            backward(fn())
            live = [(n, p) for n, p in params if p.grad is not None and np.any(p.grad != 0)]
            errs = grad_check_params(fn, live, h=h, max_coords=max_coords, rng=Rng(seed, (8,)))
            out[name] = max(errs.values())
    return out, time.time() - t0
