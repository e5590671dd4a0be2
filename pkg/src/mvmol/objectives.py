"""Similarity functions and the training losses of both pre-training stages.

Conventions shared by every function here:

* molecule-side states are K query rows; their similarity to a text is the
  maximum over K of projected dot products with the projected ``[CLS]`` row;
* contrastive losses are symmetric InfoNCE over a B x B score matrix whose
  diagonal holds the positives, with the scores divided by a fixed
  temperature;
* matching losses are two-class cross-entropy over one positive row and two
  mined negatives (tail swapped, head swapped) per batch element.
"""
from dataclasses import dataclass

import numpy as np

from .encoder import Mode
from .errors import BatchingError, CategoryError, ContractError, NegativeMiningError
from .kg import TripletCategory
from .mol import Molecule
from .tensor import (
    Tensor,
    cross_entropy,
    matmul,
    reshape,
    tmax,
    transpose,
    tsum,
)
from .text import BOS, EOS, PAD, TokenSequence, concat_texts, encode, encode_prompt

TAU = 0.1


# -- similarity -------------------------------------------------------------------
def sim_matrix(pq, pt):
    """Scores S[i, j] = max_k pq[i, k] . pt[j] for projected queries (B, K, p) and texts (C, p)."""
    b, k, p = pq.shape
    dots = matmul(reshape(pq, (b * k, p)), transpose(pt))
    return tmax(reshape(dots, (b, k, pt.shape[0])), axis=1)


def sim_matrix_mol_mol(pa, pb):
    """S[i, j] = max over (a, b) of pa[i, a] . pb[j, b]."""
    b1, k1, p = pa.shape
    b2, k2, _ = pb.shape
    dots = matmul(reshape(pa, (b1 * k1, p)), transpose(reshape(pb, (b2 * k2, p))))
    dots = reshape(dots, (b1, k1, b2, k2))
    return tmax(tmax(dots, axis=3), axis=1)


def sim(model, query_states, text_states):
    """Per-pair similarity for aligned batches (B, K, d) and (B, L, d) -> (B,)."""
    pq = model.project(query_states)
    pt = model.project(text_states[:, 0])
    return tmax(tsum(pq * reshape(pt, (pt.shape[0], 1, pt.shape[1])), axis=2), axis=1)


def sim_tri(model, zhr, zt, case):
    """Per-pair triplet similarity for one category; shapes must match the case."""
    case = TripletCategory(case)
    if case is TripletCategory.MOL_TEXT:
        _expect(zhr, zt, Mode.FUSED, Mode.TEXT_ONLY)
        return sim(model, zhr.query_states, zt.text_states)
    if case is TripletCategory.MOL_MOL:
        _expect(zhr, zt, Mode.FUSED, Mode.STRUCT_ONLY)
        pa, pb = model.project(zhr.query_states), model.project(zt.query_states)
        dots = matmul(pa, transpose(pb, (0, 2, 1)))
        return tmax(tmax(dots, axis=2), axis=1)
    _expect(zhr, zt, Mode.TEXT_ONLY, Mode.TEXT_ONLY)
    return tsum(model.project(zhr.cls) * model.project(zt.cls), axis=1)


def _expect(zhr, zt, head_mode, tail_mode):
    if zhr.mode is not head_mode or zt.mode is not tail_mode:
        raise ContractError(f"expected ({head_mode.value}, {tail_mode.value}) states, "
                            f"got ({zhr.mode.value}, {zt.mode.value})")


# -- contrastive ----------------------------------------------------------------------
def info_nce(scores, tau=TAU):
    """Symmetric InfoNCE over a square score matrix with positives on the diagonal."""
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise ContractError(f"contrastive scores must be square, got {scores.shape}")
    logits = scores / tau
    target = np.arange(scores.shape[0])
    return (cross_entropy(logits, target) + cross_entropy(transpose(logits), target)) * 0.5


def loss_cmc(model, struct_states, text_states, tau=TAU):
    """Structure-text contrastive loss. Returns ``(loss, scores)``."""
    scores = sim_matrix(model.project(struct_states), model.project(text_states[:, 0]))
    return info_nce(scores, tau), scores


# -- hard negatives ------------------------------------------------------------------
def _sample_off_diagonal(scores, tau, gen):
    """Per row, one column != row with probability proportional to exp(score / tau)."""
    b = scores.shape[0]
    z = scores.astype(np.float64) / tau
    z[np.arange(b), np.arange(b)] = -np.inf
    z -= z.max(axis=1, keepdims=True)
    w = np.exp(z)
    cdf = np.cumsum(w / w.sum(axis=1, keepdims=True), axis=1)
    u = gen.random(b)[:, None]
    idx = (u >= cdf).sum(axis=1)
    idx = np.minimum(idx, b - 1)
    # guard against landing on the excluded diagonal at a cdf plateau
    bad = idx == np.arange(b)
    if bad.any():
        idx[bad] = np.array([np.flatnonzero(w[i] > 0)[-1] for i in np.flatnonzero(bad)])
    return idx


def mine_hard_negatives(scores, rng, tau=TAU):
    """Sample (neg_text_idx, neg_mol_idx): softmax-weighted off-diagonal picks per row and per column."""
    s = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise NegativeMiningError(f"scores must be square, got {s.shape}")
    if s.shape[0] < 2:
        raise NegativeMiningError("hard-negative mining needs a batch of at least 2")
    gen = getattr(rng, "gen", rng)
    neg_text = _sample_off_diagonal(s, tau, gen)
    neg_mol = _sample_off_diagonal(s.T.copy(), tau, gen)
    return neg_text, neg_mol


def _match_ce(logits, b):
    labels = np.concatenate([np.ones(b, dtype=np.int64), np.zeros(2 * b, dtype=np.int64)])
    return cross_entropy(logits, labels)


def loss_cmm(model, molecules, texts, neg_text, neg_mol):
    """Matching loss over 3B fused passes: (h,t)=1, (h,t_neg)=0, (h_neg,t)=0."""
    b = len(molecules)
    mols = list(molecules) + list(molecules) + [molecules[j] for j in neg_mol]
    seqs = list(texts) + [texts[j] for j in neg_text] + list(texts)
    fused = model.encoder.forward_fused(mols, seqs)
    return _match_ce(model.match_logits(fused.query_states), b)


@dataclass(frozen=True)
class Stage1Flags:
    cmc: bool = True
    cmm: bool = True


def stage1_loss(model, molecules, texts, rng, tau=TAU, flags=Stage1Flags()):
    """L_cmc + L_cmm on a batch of aligned (molecule, text) pairs.

    Returns ``(total, parts)`` where ``parts`` maps component names to floats.
    """
    enc = model.encoder
    zs = enc.forward_struct(molecules).query_states
    zt = enc.forward_text(texts).text_states
    cmc, scores = loss_cmc(model, zs, zt, tau)
    parts, total = {}, None
    if flags.cmc:
        total = cmc
        parts["cmc"] = float(cmc.data)
    if flags.cmm and len(molecules) >= 2:
        neg_text, neg_mol = mine_hard_negatives(scores, rng, tau)
        cmm = loss_cmm(model, molecules, texts, neg_text, neg_mol)
        total = cmm if total is None else total + cmm
        parts["cmm"] = float(cmm.data)
    if total is None:
        total = cmc * 0.0
    return total, parts


# -- stage 2: triplets ------------------------------------------------------------------
@dataclass
class EncodedTriplets:
    """Token-level view of a homogeneous triplet batch."""

    category: TripletCategory
    heads: list      # Molecule or TokenSequence
    relations: list  # TokenSequence (possibly EMPTY)
    tails: list      # Molecule or TokenSequence

    def __len__(self):
        return len(self.heads)


def encode_triplets(model, batch):
    """Tokenize a resolved :class:`mvmol.kg.TripletBatch` (or raw head/relation/tail lists)."""
    cats = {t.category for t in batch.triplets}
    if len(cats) != 1:
        raise BatchingError(f"triplet batch mixes categories {sorted(c.value for c in cats)}")
    category = cats.pop()
    max_len = model.cfg.max_text_len

    def tok(x):
        if isinstance(x, (Molecule, TokenSequence)):
            return x
        return encode(x, model.vocab, max_len=max_len)

    relations = [r if isinstance(r, TokenSequence) else encode_prompt(r, model.vocab, max_len) for r in batch.relations]
    return EncodedTriplets(category, [tok(h) for h in batch.heads], relations, [tok(t) for t in batch.tails])


def relation_transform(model, heads, relations):
    """z^(h,r): fused states for molecule heads, text states of ``h (+) r`` for text heads."""
    if all(isinstance(h, Molecule) for h in heads):
        return model.encoder.forward_fused(heads, relations)
    if any(isinstance(h, Molecule) for h in heads):
        raise BatchingError("relation_transform batch mixes molecule and text heads")
    return model.encoder.forward_text([_cat(h, r, model) for h, r in zip(heads, relations)])


def _cat(a, b, model):
    return concat_texts(a, b, model.cfg.max_text_len)


def encode_tails(model, enc):
    if enc.category is TripletCategory.MOL_MOL:
        return model.encoder.forward_struct(enc.tails)
    return model.encoder.forward_text(enc.tails)


def triplet_scores(model, zhr, zt, category):
    """B x B scores between every z^(h_i, r_i) and every tail t_j."""
    category = TripletCategory(category)
    if category is TripletCategory.MOL_TEXT:
        _expect(zhr, zt, Mode.FUSED, Mode.TEXT_ONLY)
        return sim_matrix(model.project(zhr.query_states), model.project(zt.cls))
    if category is TripletCategory.MOL_MOL:
        _expect(zhr, zt, Mode.FUSED, Mode.STRUCT_ONLY)
        return sim_matrix_mol_mol(model.project(zhr.query_states), model.project(zt.query_states))
    _expect(zhr, zt, Mode.TEXT_ONLY, Mode.TEXT_ONLY)
    return matmul(model.project(zhr.cls), transpose(model.project(zt.cls)))


def loss_kge_c(model, enc, tau=TAU, zhr=None):
    """Triplet contrastive loss with in-batch head-side and tail-side negatives.

    Each in-batch head keeps its own relation when it serves as a negative.
    Returns ``(loss, scores)``.
    """
    if zhr is None:
        zhr = relation_transform(model, enc.heads, enc.relations)
    zt = encode_tails(model, enc)
    scores = triplet_scores(model, zhr, zt, enc.category)
    return info_nce(scores, tau), scores


def _no_molmol(enc, what):
    if enc.category is TripletCategory.MOL_MOL:
        raise CategoryError(f"{what} is not defined for MolMol triplets")


def loss_kge_m(model, enc, neg_tail, neg_head):
    """Triplet matching: (h, r, t)=1, (h, r, t_neg)=0, (h_neg, r, t)=0."""
    _no_molmol(enc, "triplet matching")
    b = len(enc)
    h, r, t = enc.heads, enc.relations, enc.tails
    heads = list(h) + list(h) + [h[j] for j in neg_head]
    rts = ([_cat(r[i], t[i], model) for i in range(b)]
           + [_cat(r[i], t[neg_tail[i]], model) for i in range(b)]
           + [_cat(r[i], t[i], model) for i in range(b)])
    if enc.category is TripletCategory.MOL_TEXT:
        fused = model.encoder.forward_fused(heads, rts)
        logits = model.match_logits(fused.query_states)
    else:
        out = model.encoder.forward_text([_cat(hh, rt, model) for hh, rt in zip(heads, rts)])
        logits = model.match_logits(out.text_states, out.text_mask)
    return _match_ce(logits, b)


def decoder_memory(zhr):
    """Decoder conditioning from a relation representation: states plus key mask."""
    if zhr.mode is Mode.TEXT_ONLY:
        return zhr.text_states, zhr.text_mask
    return zhr.query_states, None


def target_batch(seqs):
    """Padded teacher-forcing inputs (B, T) and next-token targets (B, T)."""
    T = max(len(s) for s in seqs) - 1
    inp = np.full((len(seqs), T), PAD, dtype=np.int64)
    tgt = np.full((len(seqs), T), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids = s.ids
        inp[i, :len(ids) - 1] = ids[:-1]
        tgt[i, :len(ids) - 1] = ids[1:]
    return inp, tgt


def lm_loss(model, memory, memory_mask, targets):
    """Token-averaged teacher-forced cross-entropy of ``targets`` ([BOS] ... [EOS])."""
    inp, tgt = target_batch(targets)
    logits = model.decoder.forward_teacher(memory, memory_mask, inp)
    b, T, V = logits.shape
    return cross_entropy(reshape(logits, (b * T, V)), tgt.reshape(-1), ignore_index=PAD)


def loss_kgc(model, enc, zhr=None):
    """Generate the tail text from z^(h,r)."""
    _no_molmol(enc, "tail generation")
    if zhr is None:
        zhr = relation_transform(model, enc.heads, enc.relations)
    targets = [as_target(t, model.cfg.max_gen_len) for t in enc.tails]
    memory, mask = decoder_memory(zhr)
    return lm_loss(model, memory, mask, targets)


def as_target(seq, max_len):
    """[BOS] body [EOS] for an encoded text, truncated so [EOS] survives."""
    return TokenSequence((BOS,) + tuple(seq.body)[: max(max_len - 2, 0)] + (EOS,))


@dataclass(frozen=True)
class Stage2Flags:
    kge_c: bool = True
    kge_m: bool = True
    kgc: bool = True


def stage2_loss(model, enc, rng, tau=TAU, flags=Stage2Flags()):
    """L_kge_c + L_kge_m + L_kgc; the latter two are skipped for MolMol batches.

    ``z^(h,r)`` is computed once and shared by the three terms. Matching
    also needs two distinct batch elements to mine from, so a batch of one
    contributes no matching term. Returns ``(total, parts)``.
    """
    zhr = relation_transform(model, enc.heads, enc.relations)
    kge_c, scores = loss_kge_c(model, enc, tau, zhr=zhr)
    parts, terms = {}, []
    if flags.kge_c:
        terms.append(kge_c)
        parts["kge_c"] = float(kge_c.data)
    if enc.category is not TripletCategory.MOL_MOL:
        if flags.kge_m and len(enc) >= 2:
            neg_tail, neg_head = mine_hard_negatives(scores, rng, tau)
            m = loss_kge_m(model, enc, neg_tail, neg_head)
            terms.append(m)
            parts["kge_m"] = float(m.data)
        if flags.kgc:
            g = loss_kgc(model, enc, zhr=zhr)
            terms.append(g)
            parts["kgc"] = float(g.data)
    if not terms:
        return kge_c * 0.0, parts
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total, parts

