"""Ranking metrics and AUROC."""
import numpy as np

from ..errors import InputError


def ranks_from_scores(scores, true_idx, ids=None):
    """1-based rank of each query's true candidate.

    Candidates are ordered by descending score with ties broken by ascending
    candidate id (``ids`` defaults to the column index), matching
    :func:`mvmol.pipeline.retrieval.retrieve`.
    """
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(true_idx, dtype=np.int64)
    if s.ndim != 2 or t.shape != (s.shape[0],):
        raise InputError(f"need (Q, N) scores and Q true indices, got {s.shape} and {t.shape}")
    order_key = np.arange(s.shape[1]) if ids is None else _id_order(ids)
    rows = np.arange(s.shape[0])
    true_s = s[rows, t][:, None]
    ahead = (s > true_s) | ((s == true_s) & (order_key[None, :] < order_key[t][:, None]))
    return 1 + ahead.sum(axis=1)


def _id_order(ids):
    """Position of each id in ascending id order, as an integer key."""
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    key = np.empty(len(ids), dtype=np.int64)
    key[order] = np.arange(len(ids))
    return key


def retrieval_metrics(ranks, ks=(1, 5, 10)):
    """``{"MRR": ..., "R@1": ..., ...}`` from 1-based ranks."""
    r = np.asarray(ranks, dtype=np.float64)
    if r.size == 0:
        raise InputError("no ranks to summarize")
    out = {"MRR": float(np.mean(1.0 / r))}
    for k in ks:
        out[f"R@{k}"] = float(np.mean(r <= k))
    return out


def random_mrr(n_candidates):
    """Expected MRR of a uniformly random ranking: H_N / N."""
    n = int(n_candidates)
    return float(np.sum(1.0 / np.arange(1, n + 1)) / n)


def auroc(labels, scores):
    """Area under the ROC curve (Mann-Whitney form, ties count one half)."""
    y = np.asarray(labels).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise InputError("AUROC needs both classes")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s))
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))
