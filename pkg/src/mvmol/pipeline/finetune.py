"""Binary property prediction on top of (optionally view-prompted) query states."""
import copy
import csv
from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError, LabelError
from ..synth import assign_splits
from ..tensor import AdamW, Linear, Module, Rng, backward, clip_grad_norm, cross_entropy, no_grad, relu, tmax
from ..text import encode_prompt
from .metrics import auroc


class PropertyHead(Module):
    """Two fully-connected layers with a ReLU in between, ending in two logits."""

    def __init__(self, d_in, hidden, rng, std=0.08):
        self.fc1 = Linear(d_in, hidden, rng, std=std)
        self.fc2 = Linear(hidden, 2, rng, std=std)

    def __call__(self, x):
        return self.fc2(relu(self.fc1(x)))


def head_inputs(model, molecules, prompt=""):
    """Max-pool over the K query states of the prompted fused pass.

    An empty prompt goes through the fused entry point, which hands off to the
    structure-only pass, so the "no view" ablation shares this code path.
    """
    seq = encode_prompt(prompt, model.vocab, model.cfg.max_text_len)
    fused = model.encoder.forward_fused(molecules, [seq] * len(molecules))
    return tmax(fused.query_states, axis=1)


def struct_head_inputs(model, molecules):
    """The same pooling applied directly to the structure-only output."""
    return tmax(model.encoder.forward_struct(molecules).query_states, axis=1)


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 100
    batch_size: int = 16
    lr: float = 5e-4
    weight_decay: float = 0.01
    patience: int = 20
    hidden: int = 64
    grad_clip: float = 1.0
    freeze_encoder: bool = False
    split_ratio: tuple = (8, 1, 1)
    seed: int = 0


@dataclass
class FinetuneResult:
    test_auroc: float
    val_auroc: float
    best_epoch: int
    history: list = field(default_factory=list)
    model: object = None
    head: object = None


class _Classifier(Module):
    def __init__(self, model, head):
        self.model = model
        self.head = head


def _scores(model, head, molecules, prompt, batch_size=64):
    out = []
    with no_grad():
        for i in range(0, len(molecules), batch_size):
            logits = head(head_inputs(model, molecules[i:i + batch_size], prompt)).data
            out.append((logits[:, 1] - logits[:, 0]).astype(np.float64))
    return np.concatenate(out)


def _validation_score(model, head, mols, labels, prompt):
    """Validation AUROC; with a single-class validation split fall back to negative loss."""
    if len(set(labels)) == 2:
        return auroc(labels, _scores(model, head, mols, prompt))
    with no_grad():
        logits = head(head_inputs(model, mols, prompt))
        return -float(cross_entropy(logits, np.asarray(labels, dtype=np.int64)).data)


def split_dataset(molecules, labels, ratio=(8, 1, 1)):
    splits = assign_splits(molecules, ratio)
    parts = {s: ([], []) for s in ("train", "val", "test")}
    for m, y in zip(molecules, labels):
        parts[splits[m.id]][0].append(m)
        parts[splits[m.id]][1].append(int(y))
    return parts


def finetune_property(model, molecules, labels, prompt="", cfg=FinetuneConfig(), splits=None):
    """Fine-tune a copy of ``model`` plus a fresh head; early-stop on validation AUROC.

    The input model is left untouched. Returns a :class:`FinetuneResult`
    holding the best-epoch copy.
    """
    if len(molecules) != len(labels):
        raise InputError("one label per molecule")
    parts = splits or split_dataset(molecules, labels, cfg.split_ratio)
    (tr_m, tr_y), (va_m, va_y), (te_m, te_y) = parts["train"], parts["val"], parts["test"]
    if len(set(tr_y)) < 2:
        raise LabelError("the training split holds a single class")
    if not va_m or not te_m:
        raise InputError("validation and test splits must be non-empty")
    rng = Rng(cfg.seed, (3,))
    net = copy.deepcopy(model)
    head = PropertyHead(net.cfg.d_model, cfg.hidden, rng.split(0), std=net.cfg.init_std)
    clf = _Classifier(net, head)
    params = head.named_parameters() if cfg.freeze_encoder else clf.named_parameters()
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    order_rng = rng.split(1)
    y_all = np.asarray(tr_y, dtype=np.int64)

    best, best_epoch, best_state, history, waited = -np.inf, -1, None, [], 0
    for epoch in range(cfg.epochs):
        perm = order_rng.permutation(len(tr_m))
        losses = []
        for i in range(0, len(perm), cfg.batch_size):
            idx = perm[i:i + cfg.batch_size]
            logits = head(head_inputs(net, [tr_m[j] for j in idx], prompt))
            loss = cross_entropy(logits, y_all[idx])
            opt.zero_grad()
            backward(loss)
            if cfg.grad_clip:
                clip_grad_norm(opt.params, cfg.grad_clip)
            opt.step(cfg.lr)
            losses.append(float(loss.data))
        val = _validation_score(net, head, va_m, va_y, prompt)
        history.append({"epoch": epoch, "loss": float(np.mean(losses)), "val": val})
        if val > best:
            best, best_epoch, waited = val, epoch, 0
            best_state = clf.state_dict()
            best_state = {k: v.copy() for k, v in best_state.items()}
        else:
            waited += 1
            if waited >= cfg.patience:
                break
    clf.load_state_dict(best_state)
    test = auroc(te_y, _scores(net, head, te_m, prompt)) if len(set(te_y)) == 2 else float("nan")
    return FinetuneResult(test, best, best_epoch, history, net, head)


VARIANTS = ("empty", "word", "sentence", "paragraph")


def prompt_variant_eval(model, molecules, labels, variants, cfg=FinetuneConfig(), out_csv=None):
    """Run :func:`finetune_property` once per named prompt variant with a shared seed.

    ``variants`` maps a variant name to its prompt (the empty variant maps to
    ``""``). Returns rows ``{"variant", "prompt", "val_auroc", "test_auroc",
    "best_epoch"}`` and optionally writes them as CSV.
    """
    splits = split_dataset(molecules, labels, cfg.split_ratio)
    rows = []
    for name, prompt in variants.items():
        res = finetune_property(model, molecules, labels, prompt, cfg, splits=splits)
        rows.append({"variant": name, "prompt": prompt, "val_auroc": res.val_auroc,
                     "test_auroc": res.test_auroc, "best_epoch": res.best_epoch})
    if out_csv:
        with open(out_csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return rows
