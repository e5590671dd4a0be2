"""Command-line entry point: ``mvmol <subcommand> [options]``."""
import argparse
import csv
import json
import os
import sys
from dataclasses import replace

import numpy as np

from ..errors import InputError, MVMolError
from ..kg import KnowledgeGraph, read_triplets
from ..model import ModelConfig, MVMol, model_vocab
from ..synth import ALL_VIEWS, VIEW_RELATIONS, CorpusSpec, ViewKind, generate_corpus, load_corpus
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, load_config
from .presets import PRESETS, resolve_prompt


# -- shared plumbing ------------------------------------------------------------------
def _configs(args, **train_overrides):
    train, model = TrainConfig(**train_overrides), ModelConfig()
    if args.config:
        train, model = load_config(args.config, train, model)
    if args.seed is not None:
        train, model = replace(train, seed=args.seed), replace(model, seed=args.seed)
    return train, model


def _with_steps(train, steps):
    return replace(train, steps=steps, warmup_steps=min(train.warmup_steps, steps - 1))


def _corpus(args):
    if not args.data:
        raise InputError("--data <corpus dir> is required")
    return load_corpus(args.data)


def _model(args, corpus=None, model_cfg=None):
    """Load ``--checkpoint`` when given, else build a fresh model over the corpus vocabulary."""
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
        return model
    if corpus is None:
        raise InputError("need --checkpoint or --data to build a model")
    vocab = model_vocab(corpus.all_texts(), corpus.molecules, (model_cfg or ModelConfig()).n_atom_types)
    return MVMol(vocab, model_cfg or ModelConfig())


def _out_dir(args):
    out = args.out_dir or "."
    os.makedirs(out, exist_ok=True)
    return out


def _split_mols(corpus, split):
    return corpus.molecules if split == "all" else corpus.split_molecules(split)


def _print_json(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=float))


def synthetic_label(m):
    """1 when atom type 3 is present and the graph has at least one ring."""
    return int(3 in m.atoms and m.ring_count() >= 1)


def _labels(args, molecules):
    if not args.labels:
        return [synthetic_label(m) for m in molecules]
    table = {}
    with open(args.labels, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                mid, y = line.split("\t")[:2]
                table[mid] = int(y)
    missing = [m.id for m in molecules if m.id not in table]
    if missing:
        raise InputError(f"labels file misses {len(missing)} molecules, e.g. {missing[:3]}")
    return [table[m.id] for m in molecules]


# -- subcommands -----------------------------------------------------------------------
def cmd_synth_gen(args):
    views = tuple(ViewKind(v) for v in args.views.split(",")) if args.views else ALL_VIEWS
    spec = CorpusSpec(n_molecules=args.n, seed=args.seed or 0, views=views,
                      atoms_min=args.atoms_min, atoms_max=args.atoms_max)
    corpus = generate_corpus(spec)
    out = _out_dir(args)
    corpus.write(out)
    print(f"wrote {len(corpus.molecules)} molecules, {len(corpus.texts)} texts, "
          f"{len(corpus.triplets)} triplets to {out}")


def cmd_pretrain_stage1(args):
    from .train import train_stage1

    train, mcfg = _configs(args, stage=1)
    if args.steps:
        train = _with_steps(train, args.steps)
    corpus = _corpus(args)
    model = _model(args, corpus, mcfg)
    pairs = corpus.stage1_pairs(None if args.split == "all" else args.split)
    res = train_stage1(model, pairs, train, _out_dir(args))
    print(f"stage1: {train.steps} steps, loss {res.initial_loss:.4f} -> {res.final_loss:.4f}")


def cmd_pretrain_stage2(args):
    from .train import train_stage2

    train, mcfg = _configs(args, stage=2)
    if args.steps:
        train = _with_steps(train, args.steps)
    corpus = _corpus(args)
    model = _model(args, corpus, mcfg)
    res = train_stage2(model, corpus.kg(), train, _out_dir(args))
    print(f"stage2: {train.steps} steps, loss {res.initial_loss:.4f} -> {res.final_loss:.4f}")


def _index(args, model, corpus):
    from .retrieval import embed

    mols = _split_mols(corpus, args.split)
    if args.items == "mol":
        return embed(model, mols, view_prompt=resolve_prompt(args.prompt))
    view = ViewKind(args.view)
    return embed(model, [corpus.text_for(m.id, view) for m in mols], ids=[m.id for m in mols])


def cmd_embed(args):
    corpus = _corpus(args)
    model = _model(args, corpus)
    index = _index(args, model, corpus)
    path = os.path.join(_out_dir(args), f"index_{index.kind}.npz")
    np.savez(path, ids=np.array(index.ids), emb=index.emb, kind=index.kind, prompt=index.prompt)
    print(f"embedded {len(index)} {index.kind} items {tuple(index.emb.shape[1:])} -> {path}")


def cmd_export_emb(args):
    from .retrieval import export_embeddings

    corpus = _corpus(args)
    model = _model(args, corpus)
    index = _index(args, model, corpus)
    path = os.path.join(_out_dir(args), args.out or f"embeddings_{index.kind}.csv")
    export_embeddings(index, path)
    print(f"wrote {len(index)} rows to {path}")


def cmd_retrieve(args):
    from .retrieval import embed, retrieve

    corpus = _corpus(args)
    model = _model(args, corpus)
    mols = _split_mols(corpus, args.split)
    view = ViewKind(args.view)
    if args.direction == "S-T":
        query = corpus.mol_by_id.get(args.query)
        if query is None:
            raise InputError(f"unknown molecule id {args.query!r}")
        index = embed(model, [corpus.text_for(m.id, view) for m in mols], ids=[m.id for m in mols])
        index.prompt = resolve_prompt(args.prompt)
    else:
        query = args.query
        index = embed(model, mols, view_prompt=resolve_prompt(args.prompt))
    ranking = retrieve(model, query, index, k=args.k, alpha=args.alpha)
    for rank, (i, s) in enumerate(zip(ranking.ids[:args.top], ranking.scores[:args.top]), 1):
        print(f"{rank}\t{i}\t{s:.6f}")


def cmd_eval_retrieval(args):
    from .retrieval import eval_retrieval

    corpus = _corpus(args)
    model = _model(args, corpus)
    mols = _split_mols(corpus, args.split)
    view = ViewKind(args.view)
    texts = [corpus.text_for(m.id, view) for m in mols]
    prompt = VIEW_RELATIONS[view] if args.prompt == "@view" else resolve_prompt(args.prompt)
    res = eval_retrieval(model, mols, texts, k=args.k, alpha=args.alpha, prompt=prompt)
    path = os.path.join(_out_dir(args), "retrieval_metrics.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["direction", "MRR", "R@1", "R@5", "R@10"])
        for d, m in res.items():
            w.writerow([d, m["MRR"], m["R@1"], m["R@5"], m["R@10"]])
    _print_json(res)


def _ft_config(args):
    from .finetune import FinetuneConfig

    return FinetuneConfig(epochs=args.epochs, lr=args.lr, patience=args.patience, seed=args.seed or 0,
                          freeze_encoder=args.freeze)


def cmd_finetune_prop(args):
    from .finetune import finetune_property

    corpus = _corpus(args)
    model = _model(args, corpus)
    y = _labels(args, corpus.molecules)
    res = finetune_property(model, corpus.molecules, y, resolve_prompt(args.prompt), _ft_config(args))
    _print_json({"test_auroc": res.test_auroc, "val_auroc": res.val_auroc, "best_epoch": res.best_epoch})
    if args.out_dir:
        save_checkpoint(os.path.join(_out_dir(args), "finetuned.mvml"), res.model, {"stage": "finetune"})


def cmd_prompt_eval(args):
    from .finetune import prompt_variant_eval

    corpus = _corpus(args)
    model = _model(args, corpus)
    y = _labels(args, corpus.molecules)
    variants = {"empty": "", "word": args.word, "sentence": resolve_prompt(args.sentence),
                "paragraph": resolve_prompt(args.paragraph)}
    for item in args.variant or []:
        name, _, prompt = item.partition("=")
        variants[name] = resolve_prompt(prompt)
    path = os.path.join(_out_dir(args), "prompt_variants.csv")
    rows = prompt_variant_eval(model, corpus.molecules, y, variants, _ft_config(args), path)
    for r in rows:
        print(f"{r['variant']}\t{r['test_auroc']:.4f}")


def cmd_caption(args):
    from .generation import caption, train_captioning

    corpus = _corpus(args)
    model = _model(args, corpus)
    prompt = resolve_prompt(args.prompt)
    if args.train_steps:
        view = ViewKind(args.view)
        pairs = [(m, corpus.text_for(m.id, view)) for m in corpus.split_molecules("train")]
        train = _with_steps(_configs(args)[0], args.train_steps)
        train_captioning(model, pairs, train, prompt, _out_dir(args))
    mols = [corpus.mol_by_id[i] for i in args.ids] if args.ids else _split_mols(corpus, args.split)
    for m, text in zip(mols, caption(model, mols, prompt)):
        print(f"{m.id}\t{text}")


def cmd_gen_mol(args):
    from .generation import generate_molecule, train_text2mol, validity_rate

    corpus = _corpus(args) if args.data else None
    model = _model(args, corpus)
    if args.train_steps:
        if corpus is None:
            raise InputError("training text-to-molecule needs --data")
        view = ViewKind(args.view)
        pairs = [(corpus.text_for(m.id, view), m) for m in corpus.split_molecules("train")]
        train = _with_steps(_configs(args)[0], args.train_steps)
        train_text2mol(model, pairs, train, _out_dir(args))
    if args.text:
        texts = args.text
    elif corpus is not None:
        view = ViewKind(args.view)
        texts = [corpus.text_for(m.id, view) for m in _split_mols(corpus, args.split)]
    else:
        raise InputError("give --text or --data")
    outs = generate_molecule(model, texts)
    for t, s in zip(texts, outs):
        print(f"{t}\t{s}")
    print(f"valid fraction {validity_rate(outs):.3f}")


def cmd_kg_stats(args):
    if args.triplets:
        corpus = load_corpus(args.data) if args.data else None
        trips = read_triplets(args.triplets)
        if corpus is None:
            from collections import Counter

            counts = Counter(t.category.value for t in trips)
            for k in ("MolText", "MolMol", "TextText"):
                print(f"{k}\t{counts.get(k, 0)}")
            return
        kg = KnowledgeGraph(trips, corpus.mol_by_id, corpus.texts)
    else:
        kg = _corpus(args).kg()
    print(kg.format_stats())


def cmd_grad_check(args):
    from .gradsuite import run_grad_suite

    errs, seconds = run_grad_suite(batch=args.batch, seed=args.seed or 0)
    worst = 0.0
    for name, e in errs.items():
        worst = max(worst, e)
        print(f"{name:16s} {e:.3e} {'ok' if e <= args.tol else 'FAIL'}")
    print(f"max {worst:.3e} in {seconds:.1f}s")
    if worst > args.tol:
        sys.exit(1)


# -- parser ---------------------------------------------------------------------------
def build_parser():
    p = argparse.ArgumentParser(prog="mvmol", description="Multi-view molecular representation learning.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="flat key=value config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--checkpoint", help="model checkpoint to load")
        sp.add_argument("--out-dir", dest="out_dir")
        sp.add_argument("--data", help="corpus directory (molecules.jsonl, texts.jsonl, triplets.tsv)")
        sp.set_defaults(fn=fn)
        return sp

    def split_opt(sp, default="test"):
        sp.add_argument("--split", default=default, choices=["train", "val", "test", "all"])

    views = [v.value for v in ViewKind]

    sp = add("synth-gen", cmd_synth_gen, "generate a synthetic multi-view corpus")
    sp.add_argument("--n", type=int, default=64)
    sp.add_argument("--views", default="", help="comma-separated subset of " + ",".join(views))
    sp.add_argument("--atoms-min", dest="atoms_min", type=int, default=4)
    sp.add_argument("--atoms-max", dest="atoms_max", type=int, default=12)

    for name, fn in (("pretrain-stage1", cmd_pretrain_stage1), ("pretrain-stage2", cmd_pretrain_stage2)):
        sp = add(name, fn, f"run {name.split('-')[1]} pre-training")
        sp.add_argument("--steps", type=int)
        split_opt(sp, "train")

    for name, fn in (("embed", cmd_embed), ("export-emb", cmd_export_emb)):
        sp = add(name, fn, "embed molecules or texts" if name == "embed" else "write embeddings as CSV")
        sp.add_argument("--items", choices=["mol", "text"], default="mol")
        sp.add_argument("--prompt", default="", help="view prompt, or @preset")
        sp.add_argument("--view", choices=views, default=views[0], help="which view text to embed for --items text")
        sp.add_argument("--out", help="output file name (export-emb)")
        split_opt(sp, "all")

    def rerank(sp):
        sp.add_argument("--k", type=int, default=32)
        sp.add_argument("--alpha", type=float, default=0.8)
        sp.add_argument("--view", choices=views, default=views[0])
        split_opt(sp)

    sp = add("retrieve", cmd_retrieve, "rank candidates for one query")
    sp.add_argument("--query", required=True, help="molecule id (S-T) or query text (T-S)")
    sp.add_argument("--direction", choices=["S-T", "T-S"], default="S-T")
    sp.add_argument("--prompt", default="")
    sp.add_argument("--top", type=int, default=10)
    rerank(sp)

    sp = add("eval-retrieval", cmd_eval_retrieval, "MRR / R@k in both directions")
    sp.add_argument("--prompt", default="@view", help="molecule prompt; @view uses the view relation")
    rerank(sp)

    for name, fn in (("finetune-prop", cmd_finetune_prop), ("prompt-eval", cmd_prompt_eval)):
        sp = add(name, fn, "binary property fine-tuning" if name == "finetune-prop" else "compare prompt variants")
        sp.add_argument("--labels", help="TSV of molecule id and 0/1 label (default: synthetic rule)")
        sp.add_argument("--epochs", type=int, default=100)
        sp.add_argument("--lr", type=float, default=5e-4)
        sp.add_argument("--patience", type=int, default=20)
        sp.add_argument("--freeze", action="store_true", help="train the head only")
        if name == "finetune-prop":
            sp.add_argument("--prompt", default="", help="view prompt or @preset (" + ", ".join(sorted(PRESETS)) + ")")
        else:
            sp.add_argument("--word", default="BBBP")
            sp.add_argument("--sentence", default="@bbbp")
            sp.add_argument("--paragraph", default=(
                "blood-brain barrier penetration (permeability). The blood-brain barrier separates "
                "circulating blood from the brain and only some small molecules pass it."))
            sp.add_argument("--variant", action="append", help="extra name=prompt variant")

    sp = add("caption", cmd_caption, "generate captions for molecules")
    sp.add_argument("--prompt", default="@caption")
    sp.add_argument("--ids", nargs="*")
    sp.add_argument("--train-steps", dest="train_steps", type=int, default=0)
    sp.add_argument("--view", choices=views, default=views[0], help="caption targets used for training")
    split_opt(sp)

    sp = add("gen-mol", cmd_gen_mol, "generate linear molecules from text")
    sp.add_argument("--text", nargs="*")
    sp.add_argument("--train-steps", dest="train_steps", type=int, default=0)
    sp.add_argument("--view", choices=views, default=views[0])
    split_opt(sp)

    sp = add("kg-stats", cmd_kg_stats, "category counts of a knowledge graph")
    sp.add_argument("--triplets", help="TSV triplet file (defaults to the corpus triplets)")

    sp = add("grad-check", cmd_grad_check, "finite-difference check of every loss")
    sp.add_argument("--batch", type=int, default=3)
    sp.add_argument("--tol", type=float, default=1e-4)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except MVMolError as exc:
        print(f"mvmol {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
