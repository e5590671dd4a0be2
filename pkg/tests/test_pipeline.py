import copy
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import roc_auc_score

from mvmol.errors import CheckpointError, ContractError, InputError, LabelError
from mvmol.kg import KnowledgeGraph, TripletCategory
from mvmol.model import ModelConfig, MVMol, model_vocab
from mvmol.mol import is_valid_linear, to_linear
from mvmol.pipeline import presets
from mvmol.pipeline.checkpoint import MAGIC, load_checkpoint, load_weights_into, read_checkpoint, save_checkpoint
from mvmol.pipeline.config import TrainConfig, lr_at, parse_config
from mvmol.pipeline.finetune import (FinetuneConfig, finetune_property, head_inputs, prompt_variant_eval,
                                     struct_head_inputs)
from mvmol.pipeline.generation import (caption, generate_molecule, train_captioning, train_text2mol,
                                       validity_rate)
from mvmol.pipeline.gradsuite import TINY
from mvmol.pipeline.metrics import auroc, random_mrr, ranks_from_scores, retrieval_metrics
from mvmol.pipeline.retrieval import (embed, eval_retrieval, export_embeddings, rank_candidates,
                                      read_embeddings, retrieve, score_matrix)
from mvmol.pipeline.train import category_schedule, train_stage1, train_stage2
from mvmol.synth import CorpusSpec, generate_corpus
from mvmol.tensor import no_grad
from mvmol.text import tokenize


def _fresh(corpus, cfg=TINY):
    return MVMol(model_vocab(corpus.all_texts(), corpus.molecules), cfg)


# -- config and schedule -------------------------------------------------------------
def test_lr_schedule_endpoints():
    cfg = TrainConfig(steps=100, warmup_steps=10, peak_lr=1e-3, final_lr=1e-4)
    assert lr_at(0, cfg) == 0.0
    assert lr_at(5, cfg) == pytest.approx(5e-4)
    assert lr_at(10, cfg) == pytest.approx(1e-3)
    assert abs(lr_at(99, cfg) - 1e-4) <= 1e-8 * 1e-3
    mid = 10 + 89 / 2
    assert lr_at(mid, cfg) == pytest.approx(1e-4 + 9e-4 * (1 + math.cos(math.pi / 2)) / 2)
    lrs = [lr_at(s, cfg) for s in range(10, 100)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_train_config_invariants():
    for bad in (dict(steps=10, warmup_steps=10), dict(peak_lr=0.0), dict(final_lr=-1.0), dict(tau=0.0),
                dict(batch_size=0), dict(steps=0)):
        with pytest.raises(InputError):
            TrainConfig(**bad)


def test_parse_config_file():
    lines = ["# desk run", "steps = 40", "warmup_steps=5", "use_cmm = off", "d_model = 32  # smaller", "",
             "category_weights = MolText:2,TextText:1"]
    train, model = parse_config(lines)
    assert (train.steps, train.warmup_steps, train.use_cmm) == (40, 5, False)
    assert model.d_model == 32
    assert train.parsed_category_weights() == {"MolText": 2.0, "TextText": 1.0}
    with pytest.raises(InputError, match="unknown key"):
        parse_config(["nope = 1"])
    with pytest.raises(InputError):
        parse_config(["steps = many"])
    with pytest.raises(InputError):
        parse_config(["steps"])


def test_presets_are_total():
    for name in presets.PRESETS:
        assert presets.preset(name) == presets.PRESETS[name]
    assert presets.preset("BBBP") == "blood-brain barrier penetration (permeability)"
    assert presets.resolve_prompt("@retrieval") == "biochemical properties and functions"
    assert presets.resolve_prompt("my own words") == "my own words"
    assert presets.resolve_prompt("") == ""
    with pytest.raises(InputError):
        presets.preset("unknown")


# -- checkpoints ---------------------------------------------------------------------
def test_checkpoint_round_trip(tmp_path, tiny32):
    model, _ = tiny32
    a, b = tmp_path / "a.mvml", tmp_path / "b.mvml"
    save_checkpoint(a, model, {"stage": "x"})
    assert a.read_bytes().startswith(MAGIC)
    back, extra = load_checkpoint(a)
    assert extra == {"stage": "x"} and back.cfg == model.cfg and back.vocab == model.vocab
    for (n1, p1), (n2, p2) in zip(model.named_parameters(), back.named_parameters()):
        assert n1 == n2 and np.array_equal(p1.data, p2.data)
    save_checkpoint(b, back, extra)
    assert a.read_bytes() == b.read_bytes()


def test_checkpoint_errors(tmp_path, tiny32):
    model, corpus = tiny32
    path = tmp_path / "c.mvml"
    save_checkpoint(path, model)
    raw = path.read_bytes()
    (tmp_path / "bad").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        read_checkpoint(tmp_path / "bad")
    (tmp_path / "short").write_bytes(raw[:-3])
    with pytest.raises(CheckpointError, match="truncated"):
        read_checkpoint(tmp_path / "short")
    (tmp_path / "long").write_bytes(raw + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        read_checkpoint(tmp_path / "long")
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expect_config=ModelConfig())
    other = MVMol(model.vocab, ModelConfig(d_model=8, n_heads=2, qformer_layers=3, K=2, d_proj=4))
    with pytest.raises(CheckpointError):
        load_weights_into(other, path)


# -- metrics ---------------------------------------------------------------------------
def test_metric_arithmetic():
    m = retrieval_metrics([1, 2, 4], ks=(1, 5))
    assert m["MRR"] == pytest.approx((1 + 1 / 2 + 1 / 4) / 3)
    assert m["R@1"] == pytest.approx(1 / 3) and m["R@5"] == 1.0
    assert retrieval_metrics([1, 1, 1]) == {"MRR": 1.0, "R@1": 1.0, "R@5": 1.0, "R@10": 1.0}
    assert random_mrr(4) == pytest.approx((1 + 1 / 2 + 1 / 3 + 1 / 4) / 4)


def _brute_ranks(S, ids):
    out = []
    for i, row in enumerate(S):
        order = sorted(range(len(row)), key=lambda j: (-row[j], ids[j]))
        out.append(order.index(i) + 1)
    return out


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**31 - 1), st.booleans())
def test_ranks_match_full_sort(n, seed, coarse):
    g = np.random.default_rng(seed)
    S = g.random((n, n))
    if coarse:
        S = np.round(S, 1)
    ids = [f"m{int(v):03d}" for v in g.permutation(n)]
    assert ranks_from_scores(S, np.arange(n), ids).tolist() == _brute_ranks(S, ids)


def test_auroc_against_reference(gen):
    assert auroc([1, 1, 0, 0], [0.9, 0.8, 0.3, 0.1]) == 1.0
    assert auroc([1, 0, 1, 0], [0.5] * 4) == 0.5
    for _ in range(20):
        y = gen.integers(0, 2, 30)
        y[:2] = [0, 1]
        s = np.round(gen.random(30), 1)
        assert auroc(y, s) == pytest.approx(roc_auc_score(y, s), abs=1e-12)
    with pytest.raises(InputError):
        auroc([1, 1], [0.2, 0.3])


# -- re-ranking -------------------------------------------------------------------------
def test_rank_candidates_hand_example():
    sims = [0.9, 0.8, 0.8, 0.5, 0.1]
    ids = ["e", "d", "c", "b", "a"]
    L = np.array([0.0, 2.0, -1.0, 5.0, 9.0])
    order, final = rank_candidates(sims, ids, lambda pos: L[pos], k=4, alpha=0.5)
    # first stage: e, c (tie with d, smaller id), d, b | a ; rescored: b 2.75, d 1.4, e 0.45, c -0.1
    assert [ids[i] for i in order] == ["b", "d", "e", "c", "a"]
    np.testing.assert_allclose(final, [0.45, 1.4, -0.1, 2.75, 0.1])


def test_rank_candidates_blend_limits(gen):
    for _ in range(50):
        n = int(gen.integers(1, 15))
        sims = np.round(gen.random(n), 1)
        ids = [f"x{i:02d}" for i in gen.permutation(n)]
        logits = gen.normal(size=n) * 3
        plain, _ = rank_candidates(sims, ids, None, k=32, alpha=1.0)
        blended, _ = rank_candidates(sims, ids, lambda p: logits[p], k=int(gen.integers(1, 40)), alpha=1.0)
        assert plain.tolist() == blended.tolist()
        assert plain.tolist() == sorted(range(n), key=lambda j: (-sims[j], ids[j]))
        full, _ = rank_candidates(sims, ids, lambda p: logits[p], k=n, alpha=0.0)
        assert full.tolist() == sorted(range(n), key=lambda j: (-logits[j], ids[j]))
    with pytest.raises(InputError):
        rank_candidates([0.1], ["a"], alpha=1.5)
    with pytest.raises(InputError):
        rank_candidates([0.1], ["a"], k=0)
    with pytest.raises(InputError):
        rank_candidates([], [])


# -- embedding and retrieval ----------------------------------------------------------------
def test_embed_unit_norm_and_prompt_effect(tiny):
    model, corpus = tiny
    mols = corpus.molecules[:4]
    texts = [corpus.text_for(m.id, "chemical") for m in mols]
    ti = embed(model, texts, ids=[m.id for m in mols])
    assert ti.emb.shape == (4, model.cfg.d_proj)
    np.testing.assert_allclose(np.linalg.norm(ti.emb, axis=1), 1.0, atol=1e-5)
    a = embed(model, mols, view_prompt="has chemical property")
    b = embed(model, mols, view_prompt="has physical property")
    np.testing.assert_allclose(np.linalg.norm(a.emb, axis=2), 1.0, atol=1e-5)
    assert np.abs(a.emb - b.emb).max() > 1e-3
    assert a.view_tag == "has chemical property" and embed(model, mols).view_tag == "none"
    with pytest.raises(ContractError):
        embed(model, [mols[0], texts[0]])
    with pytest.raises(ContractError):
        embed(model, texts, view_prompt="has chemical property")


def test_plain_embedding_ignores_presets(tiny, monkeypatch):
    model, corpus = tiny
    mols = corpus.molecules[:3]
    before = embed(model, mols).emb.copy()
    monkeypatch.setitem(presets.PRESETS, "retrieval", "something else entirely")
    assert np.array_equal(embed(model, mols).emb, before)


def test_retrieve_alpha_one_is_similarity_order(tiny):
    model, corpus = tiny
    mols = corpus.molecules[:6]
    texts = [corpus.text_for(m.id, "physical") for m in mols]
    tindex = embed(model, texts, ids=[m.id for m in mols])
    mindex = embed(model, mols)
    for m in mols:
        sims = score_matrix(embed(model, [m]).emb, tindex)[0]
        r = retrieve(model, m, tindex, k=4, alpha=1.0)
        assert r.ids == [tindex.ids[j] for j in sorted(range(6), key=lambda j: (-sims[j], tindex.ids[j]))]
    for t in texts:
        r = retrieve(model, t, mindex, k=32, alpha=0.5)
        assert sorted(r.ids) == sorted(mindex.ids)
    with pytest.raises(ContractError):
        retrieve(model, texts[0], tindex)


def test_eval_retrieval_matches_rank_oracle(tiny):
    model, corpus = tiny
    mols = corpus.molecules[:6]
    texts = [corpus.text_for(m.id, "chemical") for m in mols]
    got = eval_retrieval(model, mols, texts, k=32, alpha=1.0)
    ids = [m.id for m in mols]
    ti, mi = embed(model, texts, ids=ids), embed(model, mols)
    st_scores = score_matrix(mi.emb, ti)
    ts_scores = score_matrix(ti.emb, mi)
    assert got["S-T"] == retrieval_metrics(_brute_ranks(st_scores, ids))
    assert got["T-S"] == retrieval_metrics(_brute_ranks(ts_scores, ids))
    with pytest.raises(InputError):
        eval_retrieval(model, mols, texts[:2])


def test_export_round_trip(tiny, tmp_path):
    model, corpus = tiny
    mols = corpus.molecules[:3]
    index = embed(model, mols, view_prompt="has physical property")
    path = tmp_path / "emb.csv"
    export_embeddings(index, path)
    assert len(path.read_text().strip().splitlines()) == 4
    ids, views, mat = read_embeddings(path)
    assert ids == index.ids and views == ["has physical property"] * 3
    np.testing.assert_allclose(mat, index.emb.reshape(3, -1), atol=1e-6)
    with pytest.raises(OSError):
        export_embeddings(index, tmp_path / "missing" / "dir" / "x.csv")


# -- training loops -----------------------------------------------------------------------
def test_stage1_initial_loss_near_analytic_baseline():
    corpus = generate_corpus(CorpusSpec(n_molecules=8, seed=3))
    model = _fresh(corpus, ModelConfig())
    from mvmol.objectives import stage1_loss
    from mvmol.tensor import Rng

    pairs = corpus.stage1_pairs()
    with no_grad():
        loss, _ = stage1_loss(model, [m for m, _ in pairs], [model.tokens(t) for _, t in pairs], Rng(0))
    base = math.log(8) + math.log(2)
    assert abs(float(loss.data) - base) <= 0.25 * base


def test_stage1_is_deterministic_and_writes_artifacts(tmp_path):
    corpus = generate_corpus(CorpusSpec(n_molecules=12, atoms_min=3, atoms_max=6, seed=1))
    cfg = TrainConfig(steps=15, warmup_steps=3, batch_size=6, seed=4, checkpoint_every=10)
    r1 = train_stage1(_fresh(corpus), corpus.stage1_pairs(), cfg, out_dir=tmp_path)
    r2 = train_stage1(_fresh(corpus), corpus.stage1_pairs(), cfg)
    assert r1.final_loss == r2.final_loss
    assert sorted(os.listdir(tmp_path)) == ["loss_stage1.csv", "stage1.mvml", "stage1_step10.mvml"]
    with pytest.raises(InputError):
        train_stage1(_fresh(corpus), [], cfg)


def test_stage2_molmol_only_and_ablation_flags():
    corpus = generate_corpus(CorpusSpec(n_molecules=24, atoms_min=3, atoms_max=6, seed=1))
    full = corpus.kg()
    mm = KnowledgeGraph(full.by_category(TripletCategory.MOL_MOL), full.molecules, full.texts)
    res = train_stage2(_fresh(corpus), mm, TrainConfig(stage=2, steps=6, warmup_steps=1, batch_size=4))
    assert all(set(h) - {"step", "lr", "loss", "category"} == {"kge_c"} for h in res.history)
    cfg = TrainConfig(stage=2, steps=12, warmup_steps=1, batch_size=4, use_kge_m=False, use_kgc=False,
                      category_weights="MolText:1")
    res = train_stage2(_fresh(corpus), full, cfg)
    assert {h["category"] for h in res.history} == {"MolText"}
    assert all("kge_m" not in h and "kgc" not in h for h in res.history)
    with pytest.raises(InputError):
        train_stage2(_fresh(corpus), KnowledgeGraph([], {}, {}), cfg)


def test_category_schedule_is_proportional():
    corpus = generate_corpus(CorpusSpec(n_molecules=24, seed=1))
    kg = corpus.kg()
    cats, p = category_schedule(kg, TrainConfig())
    counts = kg.counts()
    np.testing.assert_allclose(p, [counts[c] / len(kg) for c in cats])


def test_stage2_loss_trends_down():
    corpus = generate_corpus(CorpusSpec(n_molecules=12, atoms_min=3, atoms_max=6, seed=2))
    full = corpus.kg()
    trips = full.by_category(TripletCategory.MOL_TEXT)[:32] + full.by_category(TripletCategory.TEXT_TEXT)[:32]
    kg = KnowledgeGraph(trips, full.molecules, full.texts)
    res = train_stage2(_fresh(corpus), kg, TrainConfig(stage=2, steps=1000, warmup_steps=50, batch_size=8,
                                                       peak_lr=3e-3))
    ma = np.convolve(res.losses, np.ones(20) / 20, mode="valid")
    blocks = ma[::200]
    assert all(a > b for a, b in zip(blocks, blocks[1:]))


# -- fine-tuning -----------------------------------------------------------------------------
def _labels(mols):
    return [int(3 in m.atoms and m.ring_count() >= 1) for m in mols]


def test_empty_prompt_is_the_structure_pathway(tiny):
    model, corpus = tiny
    with no_grad():
        a = head_inputs(model, corpus.molecules, "").data
        b = struct_head_inputs(model, corpus.molecules).data
    assert np.array_equal(a, b)


def test_single_class_training_split_rejected(tiny):
    model, corpus = tiny
    with pytest.raises(LabelError):
        finetune_property(model, corpus.molecules, [0] * len(corpus.molecules), cfg=FinetuneConfig(epochs=1))


def test_prompt_variants_csv_and_replay(tmp_path):
    corpus = generate_corpus(CorpusSpec(n_molecules=60, atoms_min=3, atoms_max=8, seed=0))
    model = _fresh(corpus)
    labels = _labels(corpus.molecules)
    cfg = FinetuneConfig(epochs=3, patience=2)
    variants = {"empty": "", "word": "bbbp", "sentence": presets.preset("bbbp")}
    rows = prompt_variant_eval(model, corpus.molecules, labels, variants, cfg, out_csv=tmp_path / "v.csv")
    lines = (tmp_path / "v.csv").read_text().strip().splitlines()
    assert lines[0] == "variant,prompt,val_auroc,test_auroc,best_epoch" and len(lines) == 4
    assert [r["variant"] for r in rows] == list(variants)
    again = prompt_variant_eval(model, corpus.molecules, labels, variants, cfg)
    assert again == rows


# -- generation ------------------------------------------------------------------------------
def test_caption_and_generation_contracts(tiny):
    model, corpus = tiny
    mols = corpus.molecules[:3]
    a, b = caption(model, mols), caption(model, mols)
    assert a == b
    assert all(len(tokenize(c)) <= model.cfg.max_gen_len for c in a)
    out = generate_molecule(model, [corpus.text_for(m.id, "chemical") for m in mols])
    assert validity_rate(out) == np.mean([is_valid_linear(s) for s in out])
    assert validity_rate(["a0 a1 | 0 - 1", "zz"]) == 0.5
    with pytest.raises(InputError):
        validity_rate([])


def test_caption_and_text2mol_memorization():
    corpus = generate_corpus(CorpusSpec(n_molecules=8, seed=0))
    model = _fresh(corpus, ModelConfig())
    pairs = corpus.stage1_pairs()
    cfg = TrainConfig(steps=300, batch_size=8, warmup_steps=20)
    train_captioning(model, pairs, cfg)
    caps = caption(model, [m for m, _ in pairs])
    assert sum(" ".join(tokenize(t)) == c for (_, t), c in zip(pairs, caps)) >= 7
    train_text2mol(model, [(t, m) for m, t in pairs], cfg)
    gen = generate_molecule(model, [t for _, t in pairs])
    assert sum(g == " ".join(tokenize(to_linear(m))) for g, (m, _) in zip(gen, pairs)) >= 7
    assert validity_rate(gen) >= 7 / 8
