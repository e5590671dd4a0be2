"""Typed triplet store: entity kinds, triplet categories, TSV ingestion, sampling.

Triplet files are UTF-8 TSV without a header, five columns::

    head_kind  head_id  relation  tail_kind  tail_id

``*_kind`` is ``mol`` or ``text``; ids resolve into the molecule and text
registries; ``relation`` is the id of a relation text.
"""
import csv
from collections import Counter
from dataclasses import dataclass
from enum import Enum

from .errors import CategoryError, ParseError, ResolutionError, SamplingError


class EntityKind(Enum):
    MOL = "mol"
    TEXT = "text"


class TripletCategory(Enum):
    MOL_TEXT = "MolText"
    MOL_MOL = "MolMol"
    TEXT_TEXT = "TextText"


@dataclass(frozen=True)
class EntityRef:
    kind: EntityKind
    id: str

    @classmethod
    def mol(cls, id):
        return cls(EntityKind.MOL, id)

    @classmethod
    def text(cls, id):
        return cls(EntityKind.TEXT, id)


@dataclass(frozen=True)
class Triplet:
    head: EntityRef
    relation: str
    tail: EntityRef

    def __post_init__(self):
        if not self.relation:
            raise ValueError("relation id must be non-empty")

    @property
    def category(self):
        return categorize(self)


def categorize(t):
    h, tl = t.head.kind, t.tail.kind
    if h is EntityKind.MOL and tl is EntityKind.TEXT:
        return TripletCategory.MOL_TEXT
    if h is EntityKind.MOL and tl is EntityKind.MOL:
        return TripletCategory.MOL_MOL
    if h is EntityKind.TEXT and tl is EntityKind.TEXT:
        return TripletCategory.TEXT_TEXT
    raise CategoryError(f"text-headed triplet with molecule tail is not supported: {t}")


class KnowledgeGraph:
    """Deduplicated triplets plus the registries they point into."""

    def __init__(self, triplets, molecules, texts):
        seen, uniq = set(), []
        for t in triplets:
            categorize(t)
            if t not in seen:
                seen.add(t)
                uniq.append(t)
        self.triplets = tuple(uniq)
        self.molecules = dict(molecules)
        self.texts = dict(texts)
        self._check_resolvable()

    def _check_resolvable(self):
        missing = set()
        for t in self.triplets:
            for ref in (t.head, t.tail):
                reg = self.molecules if ref.kind is EntityKind.MOL else self.texts
                if ref.id not in reg:
                    missing.add(f"{ref.kind.value}:{ref.id}")
            if t.relation not in self.texts:
                missing.add(f"relation:{t.relation}")
        if missing:
            listed = sorted(missing)
            raise ResolutionError(f"{len(listed)} dangling ids: {', '.join(listed[:10])}", listed)

    def __len__(self):
        return len(self.triplets)

    def __eq__(self, other):
        return isinstance(other, KnowledgeGraph) and self.triplets == other.triplets

    def by_category(self, category):
        return [t for t in self.triplets if categorize(t) is category]

    def counts(self):
        c = Counter(categorize(t) for t in self.triplets)
        return {cat: c.get(cat, 0) for cat in TripletCategory}

    def resolve(self, ref):
        reg = self.molecules if ref.kind is EntityKind.MOL else self.texts
        try:
            return reg[ref.id]
        except KeyError:
            raise ResolutionError(f"unresolvable entity {ref.kind.value}:{ref.id}", [ref.id]) from None

    def relation_text(self, t):
        return self.texts[t.relation]

    def stats(self):
        """Rows for a category-count table, entities first then relations."""
        ents = set()
        for t in self.triplets:
            ents.add(t.head)
            ents.add(t.tail)
        n_mol = sum(1 for e in ents if e.kind is EntityKind.MOL)
        counts = self.counts()
        return [
            ("Entities", None),
            ("Molecules", n_mol),
            ("Texts", len(ents) - n_mol),
            ("All", len(ents)),
            ("Relations", None),
            *[(cat.value, counts[cat]) for cat in TripletCategory],
            ("All", len(self.triplets)),
        ]

    def format_stats(self):
        lines = []
        for label, val in self.stats():
            lines.append(label if val is None else f"{label}\t{val:,}")
        return "\n".join(lines)


_KINDS = {k.value: k for k in EntityKind}


def read_triplets(path):
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE), 1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise ParseError(f"expected 5 tab-separated columns, got {len(row)}", lineno)
            hk, hid, rel, tk, tid = (c.strip() for c in row)
            if hk not in _KINDS or tk not in _KINDS:
                bad = hk if hk not in _KINDS else tk
                raise ParseError(f"unknown entity kind {bad!r}", lineno)
            t = Triplet(EntityRef(_KINDS[hk], hid), rel, EntityRef(_KINDS[tk], tid))
            try:
                categorize(t)
            except CategoryError as exc:
                raise CategoryError(f"line {lineno}: {exc}") from None
            out.append(t)
    return out


def write_triplets(path, triplets):
    with open(path, "w", encoding="utf-8") as fh:
        for t in triplets:
            fh.write(f"{t.head.kind.value}\t{t.head.id}\t{t.relation}\t{t.tail.kind.value}\t{t.tail.id}\n")


def ingest(path, molecules, texts):
    """Load a triplet TSV against molecule (id -> Molecule) and text (id -> str) registries."""
    return KnowledgeGraph(read_triplets(path), molecules, texts)


@dataclass
class TripletBatch:
    category: TripletCategory
    triplets: list
    heads: list
    relations: list
    tails: list

    def __len__(self):
        return len(self.triplets)


def resolve_batch(kg, triplets):
    cats = {categorize(t) for t in triplets}
    category = cats.pop() if len(cats) == 1 else None
    return TripletBatch(
        category,
        list(triplets),
        [kg.resolve(t.head) for t in triplets],
        [kg.relation_text(t) for t in triplets],
        [kg.resolve(t.tail) for t in triplets],
    )


class TripletSampler:
    """Epoch-permutation sampler without replacement.

    Batches never straddle an epoch boundary, so each epoch visits every
    triplet exactly once (the last batch of an epoch may be short).
    """

    def __init__(self, kg, rng, category_filter=None):
        self.kg = kg
        self.rng = rng
        pool = kg.triplets if category_filter is None else kg.by_category(category_filter)
        if not pool:
            raise SamplingError(f"no triplets match filter {category_filter}")
        self.pool = list(pool)
        self.epoch = 0
        self._order = []

    def next_batch(self, batch_size):
        if not self._order:
            self._order = [int(i) for i in self.rng.permutation(len(self.pool))]
            self.epoch += 1
        take, self._order = self._order[:batch_size], self._order[batch_size:]
        return resolve_batch(self.kg, [self.pool[i] for i in take])


def sample_batch(kg, batch_size, rng, category_filter=None):
    return TripletSampler(kg, rng, category_filter).next_batch(batch_size)
