from collections import Counter

import numpy as np
import pytest

from mvmol.errors import CategoryError, ParseError, ResolutionError, SamplingError
from mvmol.kg import (EntityRef, KnowledgeGraph, Triplet, TripletCategory, TripletSampler, categorize, ingest,
                      sample_batch, write_triplets)
from mvmol.mol import Molecule
from mvmol.synth import CorpusSpec, generate_corpus
from mvmol.tensor import Rng


@pytest.fixture(scope="module")
def corpus():
    return generate_corpus(CorpusSpec(n_molecules=32, seed=2))


def _registries():
    mols = {k: Molecule(k, [0], [], [[0, 0, 0]]) for k in ("m1", "m2")}
    texts = {"t1": "soluble", "t2": "polar", "r": "has property"}
    return mols, texts


def test_categorize_definition():
    m, t = EntityRef.mol("m1"), EntityRef.text("t1")
    assert categorize(Triplet(m, "r", t)) is TripletCategory.MOL_TEXT
    assert categorize(Triplet(m, "r", m)) is TripletCategory.MOL_MOL
    assert categorize(Triplet(t, "r", t)) is TripletCategory.TEXT_TEXT
    with pytest.raises(CategoryError):
        categorize(Triplet(t, "r", m))
    with pytest.raises(ValueError):
        Triplet(m, "", t)


def test_ingest_dedups_and_is_idempotent(tmp_path):
    mols, texts = _registries()
    path = tmp_path / "t.tsv"
    path.write_text("mol\tm1\tr\ttext\tt1\nmol\tm1\tr\ttext\tt1\n\ntext\tt1\tr\ttext\tt2\nmol\tm1\tr\tmol\tm2\n")
    kg = ingest(path, mols, texts)
    assert len(kg) == 3
    assert kg == ingest(path, mols, texts)
    assert kg.counts() == {c: 1 for c in TripletCategory}
    report = kg.format_stats()
    assert report.splitlines()[0] == "Entities" and "MolText\t1" in report and report.endswith("All\t3")


@pytest.mark.parametrize("row,err", [
    ("atom\tm1\tr\ttext\tt1\n", ParseError),
    ("mol\tm1\tr\ttext\n", ParseError),
    ("text\tt1\tr\tmol\tm1\n", CategoryError),
])
def test_ingest_errors(tmp_path, row, err):
    mols, texts = _registries()
    path = tmp_path / "t.tsv"
    path.write_text(row)
    with pytest.raises(err):
        ingest(path, mols, texts)


def test_dangling_ids_are_listed(tmp_path):
    mols, texts = _registries()
    path = tmp_path / "t.tsv"
    path.write_text("mol\tm9\tr\ttext\tt1\nmol\tm1\tq\ttext\tt8\n")
    with pytest.raises(ResolutionError) as info:
        ingest(path, mols, texts)
    assert info.value.missing == ["mol:m9", "relation:q", "text:t8"]


def test_synthetic_kg_survives_tsv_round_trip(corpus, tmp_path):
    write_triplets(tmp_path / "k.tsv", corpus.triplets)
    assert ingest(tmp_path / "k.tsv", corpus.mol_by_id, corpus.texts) == corpus.kg()


def test_full_batch_is_a_permutation(corpus):
    kg = corpus.kg()
    batch = sample_batch(kg, len(kg), Rng(0))
    assert Counter(batch.triplets) == Counter(kg.triplets)
    assert batch.heads[0] is kg.resolve(batch.triplets[0].head)


def test_category_filter(corpus):
    kg = corpus.kg()
    b = sample_batch(kg, 20, Rng(1), TripletCategory.MOL_TEXT)
    assert b.category is TripletCategory.MOL_TEXT
    assert all(isinstance(h, Molecule) and isinstance(t, str) for h, t in zip(b.heads, b.tails))
    empty = KnowledgeGraph([], {}, {})
    with pytest.raises(SamplingError):
        sample_batch(empty, 1, Rng(0))


def test_every_triplet_once_per_epoch(corpus):
    kg = corpus.kg()
    pool = kg.by_category(TripletCategory.TEXT_TEXT)
    sampler = TripletSampler(kg, Rng(3).gen, TripletCategory.TEXT_TEXT)
    for epoch in (1, 2, 3):
        seen = []
        while len(seen) < len(pool):
            seen += sampler.next_batch(7).triplets
            assert sampler.epoch == epoch
        assert Counter(seen) == Counter(pool)


def test_resolve_unknown_entity(corpus):
    with pytest.raises(ResolutionError):
        corpus.kg().resolve(EntityRef.mol("nope"))
