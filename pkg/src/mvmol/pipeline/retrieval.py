"""Zero-shot cross-modal retrieval with match-logit re-ranking."""
import csv
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, InputError
from ..mol import Molecule
from ..tensor import no_grad
from ..text import TokenSequence, encode_prompt

MOL, TEXT = "mol", "text"


@dataclass
class RetrievalIndex:
    """Projected, unit-norm embeddings plus the raw items needed for re-ranking.

    Molecule rows keep all K projected query vectors, so ``emb`` is
    ``(N, K, p)`` for molecules and ``(N, p)`` for texts.
    """

    ids: list
    kind: str
    emb: np.ndarray
    items: dict = field(default_factory=dict)
    prompt: str = ""

    def __post_init__(self):
        if self.kind not in (MOL, TEXT):
            raise ContractError(f"index kind must be {MOL!r} or {TEXT!r}")
        want = 3 if self.kind == MOL else 2
        if self.emb.ndim != want or self.emb.shape[0] != len(self.ids):
            raise ContractError(f"{self.kind} index needs {want}-d embeddings with one row per id")

    def __len__(self):
        return len(self.ids)

    @property
    def view_tag(self):
        return self.prompt or "none"


def _as_seq(model, text):
    return text if isinstance(text, TokenSequence) else model.tokens(text)


def embed_molecules(model, molecules, prompt="", batch_size=64):
    """(N, K, p) projected query rows; structure-only when ``prompt`` is empty."""
    blocks = []
    with no_grad():
        for i in range(0, len(molecules), batch_size):
            chunk = molecules[i:i + batch_size]
            if prompt:
                pr = encode_prompt(prompt, model.vocab, model.cfg.max_text_len)
                q = model.encoder.forward_fused(chunk, [pr] * len(chunk)).query_states
            else:
                q = model.encoder.forward_struct(chunk).query_states
            blocks.append(model.project(q).data.astype(np.float64))
    return np.concatenate(blocks)


def embed_texts(model, texts, batch_size=64):
    """(N, p) projected [CLS] rows."""
    rows = []
    with no_grad():
        for i in range(0, len(texts), batch_size):
            seqs = [_as_seq(model, t) for t in texts[i:i + batch_size]]
            rows.append(model.project(model.encoder.forward_text(seqs).cls).data.astype(np.float64))
    return np.concatenate(rows)


def embed(model, items, view_prompt=None, ids=None):
    """Build a :class:`RetrievalIndex` over molecules or texts.

    A view prompt only makes sense for molecules; passing one with texts is a
    contract error.
    """
    items = list(items)
    if not items:
        raise InputError("nothing to embed")
    is_mol = [isinstance(x, Molecule) for x in items]
    if all(is_mol):
        ids = [m.id for m in items] if ids is None else list(ids)
        emb = embed_molecules(model, items, view_prompt or "")
        kind = MOL
    elif not any(is_mol):
        if view_prompt:
            raise ContractError("view prompts condition molecules, not texts")
        ids = [str(i) for i in range(len(items))] if ids is None else list(ids)
        emb = embed_texts(model, items)
        kind = TEXT
    else:
        raise ContractError("an index holds either molecules or texts, not both")
    return RetrievalIndex(ids, kind, emb, dict(zip(ids, items)), view_prompt or "")


def score_matrix(queries, index):
    """Similarity of each query embedding against every index item.

    Queries are ``(Q, K, p)`` molecule blocks against a text index, or
    ``(Q, p)`` text rows against a molecule index; both reduce by max over K.
    """
    if index.kind == TEXT:
        if queries.ndim != 3:
            raise ContractError("a text index is queried with molecule blocks")
        return np.einsum("qkp,np->qnk", queries, index.emb).max(axis=2)
    if queries.ndim != 2:
        raise ContractError("a molecule index is queried with text rows")
    return np.einsum("qp,nkp->qnk", queries, index.emb).max(axis=2)


def rank_candidates(sims, ids, logit_fn=None, k=32, alpha=0.8):
    """Two-stage ordering of one query's candidates.

    ``sims`` (N,) gives the first-stage order: descending similarity, ties by
    ascending id. The top ``min(k, N)`` are then re-scored as
    ``alpha * sim + (1 - alpha) * logit`` where ``logit_fn(positions)`` returns
    match-class logits for those candidate positions; the rest keep their
    first-stage order behind them. Returns ``(order, final_scores)`` where
    ``order`` holds candidate positions.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InputError("alpha must lie in [0, 1]")
    if k < 1:
        raise InputError("k must be at least 1")
    sims = np.asarray(sims, dtype=np.float64)
    n = len(sims)
    if n == 0:
        raise InputError("empty index")
    id_key = np.empty(n, dtype=np.int64)
    id_key[sorted(range(n), key=lambda i: ids[i])] = np.arange(n)
    first = np.lexsort((id_key, -sims))
    top = first[:min(k, n)]
    final = sims.copy()
    if logit_fn is not None:
        logits = np.asarray(logit_fn(top), dtype=np.float64)
        final[top] = alpha * sims[top] + (1.0 - alpha) * logits
    head = top[np.lexsort((id_key[top], -final[top]))]
    return np.concatenate([head, first[len(top):]]), final


def match_logits(model, molecules, texts, batch_size=64):
    """Match-class logit of the fused pass for aligned molecule/text lists."""
    out = []
    with no_grad():
        for i in range(0, len(molecules), batch_size):
            mols = molecules[i:i + batch_size]
            seqs = [_as_seq(model, t) for t in texts[i:i + batch_size]]
            fused = model.encoder.forward_fused(mols, seqs)
            out.append(model.match_logits(fused.query_states).data[:, 1].astype(np.float64))
    return np.concatenate(out) if out else np.zeros(0)


def _query_embedding(model, query, index):
    if index.kind == TEXT:
        if not isinstance(query, Molecule):
            raise ContractError("query a text index with a molecule")
        return embed_molecules(model, [query], index.prompt)
    if isinstance(query, Molecule):
        raise ContractError("query a molecule index with a text")
    return embed_texts(model, [query])


@dataclass
class Ranking:
    ids: list
    scores: np.ndarray  # final score per returned id, same order


def retrieve(model, query, index, k=32, alpha=0.8):
    """Ranked ids of ``index`` for a molecule query (text index) or a text query (molecule index)."""
    if len(index) == 0:
        raise InputError("empty index")
    sims = score_matrix(_query_embedding(model, query, index), index)[0]

    def logits(pos):
        cands = [index.items[index.ids[p]] for p in pos]
        if index.kind == TEXT:
            return match_logits(model, [query] * len(cands), cands)
        return match_logits(model, cands, [query] * len(cands))

    order, final = rank_candidates(sims, index.ids, logits, k, alpha)
    return Ranking([index.ids[p] for p in order], final[order])


DIRECTIONS = ("S-T", "T-S")


def eval_retrieval(model, molecules, texts, directions=DIRECTIONS, k=32, alpha=0.8,
                   prompt="", ks=(1, 5, 10)):
    """MRR and R@k over aligned lists; ``texts[i]`` is the ground truth for ``molecules[i]``.

    S-T queries each molecule against all texts, T-S each text against all
    molecules. Returns ``{direction: metrics}``.
    """
    from .metrics import retrieval_metrics

    if len(molecules) != len(texts):
        raise InputError("molecules and texts must be aligned")
    unknown = set(directions) - set(DIRECTIONS)
    if unknown:
        raise InputError(f"unknown retrieval directions {sorted(unknown)}")
    mol_ids = [m.id for m in molecules]
    text_index = embed(model, texts, ids=mol_ids)
    mol_index = embed(model, molecules, view_prompt=prompt)
    out = {}
    for direction in directions:
        ranks = []
        if direction == "S-T":
            S = score_matrix(mol_index.emb, text_index)
            for i, m in enumerate(molecules):
                order, _ = rank_candidates(
                    S[i], mol_ids, lambda pos, m=m: match_logits(model, [m] * len(pos), [texts[p] for p in pos]),
                    k, alpha)
                ranks.append(int(np.flatnonzero(order == i)[0]) + 1)
        else:
            S = score_matrix(text_index.emb, mol_index)
            for i, t in enumerate(texts):
                order, _ = rank_candidates(
                    S[i], mol_ids, lambda pos, t=t: match_logits(model, [molecules[p] for p in pos], [t] * len(pos)),
                    k, alpha)
                ranks.append(int(np.flatnonzero(order == i)[0]) + 1)
        out[direction] = retrieval_metrics(ranks, ks)
    return out


def export_embeddings(index, path):
    """Write ``id, view, e0, e1, ...`` with one row per item (molecule blocks flattened)."""
    flat = index.emb.reshape(len(index), -1)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "view"] + [f"e{j}" for j in range(flat.shape[1])])
            for i, row in zip(index.ids, flat):
                w.writerow([i, index.view_tag] + [repr(float(v)) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write embeddings to {path}: {exc}") from exc


def read_embeddings(path):
    """Inverse of :func:`export_embeddings`: ``(ids, views, matrix)``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    ids = [r[0] for r in body]
    views = [r[1] for r in body]
    mat = np.array([[float(v) for v in r[2:]] for r in body], dtype=np.float64)
    return ids, views, mat
