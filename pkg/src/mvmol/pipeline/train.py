"""Pre-training loops for both stages."""
import csv
import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError
from ..kg import TripletCategory, TripletSampler
from ..objectives import Stage1Flags, Stage2Flags, encode_triplets, stage1_loss, stage2_loss
from ..tensor import AdamW, Rng, backward, clip_grad_norm
from .checkpoint import save_checkpoint
from .config import lr_at


@dataclass
class TrainResult:
    history: list = field(default_factory=list)  # one dict per step

    @property
    def losses(self):
        return np.array([h["loss"] for h in self.history])

    @property
    def initial_loss(self):
        return self.history[0]["loss"]

    @property
    def final_loss(self):
        return self.history[-1]["loss"]

    def write_csv(self, path):
        keys = ["step", "lr", "loss"]
        extra = sorted({k for h in self.history for k in h} - set(keys))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=keys + extra, restval="")
            w.writeheader()
            for h in self.history:
                w.writerow(h)


class _Loop:
    """Shared optimizer / schedule / logging / checkpoint plumbing."""

    def __init__(self, model, cfg, out_dir, tag):
        self.model, self.cfg, self.out_dir, self.tag = model, cfg, out_dir, tag
        self.opt = AdamW(model.named_parameters(), lr=cfg.peak_lr, weight_decay=cfg.weight_decay)
        self.result = TrainResult()
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)

    def step(self, step, loss, parts):
        lr = lr_at(step, self.cfg)
        self.opt.zero_grad()
        backward(loss)
        if self.cfg.grad_clip:
            clip_grad_norm(self.opt.params, self.cfg.grad_clip)
        self.opt.step(lr)
        rec = {"step": step, "lr": lr, "loss": float(loss.data), **parts}
        self.result.history.append(rec)
        if self.cfg.log_every and step % self.cfg.log_every == 0:
            shown = " ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in parts.items())
            print(f"[{self.tag}] step {step:5d} lr {lr:.2e} loss {rec['loss']:.4f} {shown}", flush=True)
        every = self.cfg.checkpoint_every
        if self.out_dir and every and (step + 1) % every == 0:
            save_checkpoint(os.path.join(self.out_dir, f"{self.tag}_step{step + 1}.mvml"), self.model,
                            {"stage": self.tag, "step": step + 1})

    def finish(self):
        if self.out_dir:
            self.result.write_csv(os.path.join(self.out_dir, f"loss_{self.tag}.csv"))
            save_checkpoint(os.path.join(self.out_dir, f"{self.tag}.mvml"), self.model,
                            {"stage": self.tag, "step": self.cfg.steps})
        return self.result


def _epoch_batches(n, batch_size, rng):
    """Endless stream of index batches; each epoch is a fresh permutation."""
    while True:
        order = rng.permutation(n)
        for i in range(0, n, batch_size):
            yield [int(j) for j in order[i:i + batch_size]]


def train_stage1(model, pairs, cfg, out_dir=None):
    """Optimize L_cmc + L_cmm over (molecule, text) pairs.

    ``pairs`` holds ``(Molecule, str)`` tuples; texts are tokenized once.
    """
    pairs = list(pairs)
    if not pairs:
        raise InputError("stage 1 needs at least one molecule-text pair")
    mols = [m for m, _ in pairs]
    seqs = [model.tokens(t) for _, t in pairs]
    root = Rng(cfg.seed, (1,))
    batches = _epoch_batches(len(pairs), cfg.batch_size, root.split(0))
    mining = root.split(1)
    flags = Stage1Flags(cmc=cfg.use_cmc, cmm=cfg.use_cmm)
    loop = _Loop(model, cfg, out_dir, "stage1")
    for step in range(cfg.steps):
        idx = next(batches)
        loss, parts = stage1_loss(model, [mols[i] for i in idx], [seqs[i] for i in idx], mining, cfg.tau, flags)
        loop.step(step, loss, parts)
    return loop.finish()


def category_schedule(kg, cfg):
    """Categories with triplets and their sampling weights (proportional by default)."""
    counts = kg.counts()
    custom = cfg.parsed_category_weights()
    cats, weights = [], []
    for cat in TripletCategory:
        if counts[cat] == 0:
            continue
        w = counts[cat] if custom is None else custom.get(cat.value, 0.0)
        if w > 0:
            cats.append(cat)
            weights.append(float(w))
    if not cats:
        raise InputError("no triplet category has both triplets and positive weight")
    w = np.array(weights)
    return cats, w / w.sum()


def train_stage2(model, kg, cfg, out_dir=None):
    """Optimize L_kge_c + L_kge_m + L_kgc on homogeneous-category triplet batches."""
    if len(kg) == 0:
        raise InputError("stage 2 needs a non-empty knowledge graph")
    root = Rng(cfg.seed, (2,))
    cats, probs = category_schedule(kg, cfg)
    samplers = {c: TripletSampler(kg, root.split(10 + i), c) for i, c in enumerate(TripletCategory) if c in cats}
    picker, mining = root.split(0), root.split(1)
    flags = Stage2Flags(kge_c=cfg.use_kge_c, kge_m=cfg.use_kge_m, kgc=cfg.use_kgc)
    loop = _Loop(model, cfg, out_dir, "stage2")
    for step in range(cfg.steps):
        cat = cats[int(picker.choice(len(cats), p=probs))]
        enc = encode_triplets(model, samplers[cat].next_batch(cfg.batch_size))
        loss, parts = stage2_loss(model, enc, mining, cfg.tau, flags)
        loop.step(step, loss, {**parts, "category": cat.value})
    return loop.finish()
