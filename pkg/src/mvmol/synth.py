"""Deterministic synthetic multi-view corpus and knowledge graph.

Molecules are random connected graphs laid out in 3D; every view text is a
templated rendering of attributes that are pure functions of structure, so
the right text for a (molecule, view) pair is decidable. Templates of
different views share no alphabetic keywords.

On disk a corpus directory holds::

    molecules.jsonl   one molecule per line (see mvmol.mol)
    texts.jsonl       {"id", "text"} plus "mol"/"view" for view texts
    triplets.tsv      five-column triplets (see mvmol.kg)
    splits.tsv        mol_id <TAB> train|val|test
"""
import json
import math
import os
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InputError
from .kg import EntityRef, KnowledgeGraph, Triplet, read_triplets, write_triplets
from .mol import Molecule, distances, parse_molecules, structural_hash, write_molecules
from .tensor import Rng


class ViewKind(Enum):
    CHEMICAL = "chemical"
    PHYSICAL = "physical"
    PHARMACOKINETIC = "pharmacokinetic"


ALL_VIEWS = tuple(ViewKind)

# relation phrase attached to each view's molecule-text triplets; doubles as the view prompt
VIEW_RELATIONS = {
    ViewKind.CHEMICAL: "has chemical property",
    ViewKind.PHYSICAL: "has physical property",
    ViewKind.PHARMACOKINETIC: "has pharmacokinetic property",
}
SIMILAR_RELATION = "structurally similar to"
ISA_RELATION = "is a"


@dataclass(frozen=True)
class CorpusSpec:
    n_molecules: int = 64
    atoms_min: int = 4
    atoms_max: int = 12
    seed: int = 0
    views: tuple = ALL_VIEWS
    split_ratio: tuple = (7, 1, 2)
    n_atom_types: int = 8
    extra_edges_max: int = 2
    unique_views: bool = True
    max_attempts: int = 500

    def __post_init__(self):
        if self.atoms_min < 2 or self.atoms_max < self.atoms_min:
            raise InputError("need 2 <= atoms_min <= atoms_max")
        if len(self.split_ratio) != 3 or any(r < 0 for r in self.split_ratio) or sum(self.split_ratio) <= 0:
            raise InputError("split_ratio must be three non-negative numbers with a positive sum")
        if self.n_atom_types < 4:
            raise InputError("n_atom_types must be at least 4 (type 3 carries meaning)")
        views = tuple(ViewKind(v) if not isinstance(v, ViewKind) else v for v in self.views)
        if not views:
            raise InputError("at least one view is required")
        object.__setattr__(self, "views", views)
        total = float(sum(self.split_ratio))
        object.__setattr__(self, "split_ratio", tuple(r / total for r in self.split_ratio))


# -- molecules ------------------------------------------------------------------
def _random_molecule(spec, rng, mol_id):
    g = rng.gen
    n = int(g.integers(spec.atoms_min, spec.atoms_max + 1))
    atoms = g.integers(0, spec.n_atom_types, n)
    coords = np.zeros((n, 3))
    bonds = []
    for k in range(1, n):
        p = int(g.integers(0, k))
        bonds.append((p, k))
        coords[k] = coords[p] + g.normal(0.0, 1.0, 3) / math.sqrt(3.0)
    have = set(bonds)
    free = [(i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in have]
    n_extra = min(int(g.integers(0, spec.extra_edges_max + 1)), len(free))
    if n_extra:
        for idx in g.choice(len(free), size=n_extra, replace=False):
            bonds.append(free[int(idx)])
    return Molecule(mol_id, atoms, bonds, coords)


def gen_molecules(spec):
    """Random connected molecules; a pure function of ``spec``.

    With ``unique_views`` each enabled view's text is kept injective by
    redrawing a molecule (from the next sub-stream) on collision.
    """
    root = Rng(spec.seed)
    out, used = [], {v: set() for v in spec.views}
    for i in range(spec.n_molecules):
        stream = root.split(i)
        for attempt in range(spec.max_attempts):
            m = _random_molecule(spec, stream.split(attempt), f"m{i:05d}")
            if not spec.unique_views:
                break
            attrs = derive_attributes(m, spec.n_atom_types)
            texts = {v: render_text(v, attrs) for v in spec.views}
            if all(texts[v] not in used[v] for v in spec.views):
                for v in spec.views:
                    used[v].add(texts[v])
                break
        else:
            raise InputError(f"could not draw a molecule with unique view texts after "
                             f"{spec.max_attempts} attempts; lower n_molecules or set unique_views=False")
        out.append(m)
    return out


# -- attributes and templates -------------------------------------------------------------
def _bucket(x, step, top):
    return int(min(max(math.floor(x / step), 0), top))


def derive_attributes(m, n_atom_types=8):
    """Per-view attribute dicts, all computed from structure (centered coordinates)."""
    atoms = np.asarray(m.atoms)
    hist = [min(int((atoms == t).sum()), 3) for t in range(n_atom_types)]
    rings = m.ring_count()
    type3 = bool((atoms == 3).any())
    c = m.coords - m.coords.mean(axis=0)
    volume = float(np.prod(c.max(axis=0) - c.min(axis=0)))
    d = distances(m)
    n = m.n_atoms
    mean_d = float(d.sum() / (n * (n - 1))) if n > 1 else 0.0
    deg = m.degrees()
    eig = np.linalg.eigvalsh(c.T @ c / n)
    return {
        ViewKind.CHEMICAL: {"rings": min(rings, 3), "type3": type3, "histogram": hist},
        ViewKind.PHYSICAL: {
            "volume": _bucket(math.log2(1.0 + volume), 0.5, 19),
            "spread": _bucket(mean_d, 0.25, 19),
            "extent": _bucket(float(d.max()), 0.5, 19),
            "radius": _bucket(math.sqrt(max(float(eig.sum()), 0.0)), 0.2, 19),
            "thickness": _bucket(math.sqrt(max(float(eig[0]), 0.0)), 0.1, 19),
        },
        ViewKind.PHARMACOKINETIC: {
            "size": n,
            "parity": "even" if n % 2 == 0 else "odd",
            "uptake": "high" if n >= 8 else "low",
            "transport": "active" if type3 else "passive",
            "clearance": min(int((deg == 1).sum()), 9),
            "binding": min(int(deg.max()), 5),
        },
    }


def render_text(view, attrs):
    if not isinstance(view, ViewKind):
        try:
            view = ViewKind(view)
        except ValueError:
            raise InputError(f"unknown view {view!r}") from None
    if view not in attrs:
        raise InputError(f"no attributes for view {view}")
    a = attrs[view]
    if view is ViewKind.CHEMICAL:
        hist = " ".join(str(h) for h in a["histogram"])
        return (f"chemical composition : rings {a['rings']} ; type3 "
                f"{'present' if a['type3'] else 'absent'} ; histogram {hist}")
    if view is ViewKind.PHYSICAL:
        return (f"physical geometry : volume {a['volume']} ; spread {a['spread']} ; extent {a['extent']} ; "
                f"radius {a['radius']} ; thickness {a['thickness']}")
    if view is ViewKind.PHARMACOKINETIC:
        return (f"pharmacokinetic behavior : size {a['size']} ; parity {a['parity']} ; uptake "
                f"{a['uptake']} ; transport {a['transport']} ; clearance {a['clearance']} ; "
                f"binding {a['binding']}")
    raise InputError(f"unknown view {view!r}")


_ONTOLOGY = {
    ViewKind.CHEMICAL: lambda a: "cyclic compound class" if a["rings"] >= 1 else "acyclic compound class",
    ViewKind.PHYSICAL: lambda a: "compact shape class" if a["spread"] < 6 else "extended shape class",
    ViewKind.PHARMACOKINETIC: lambda a: ("permeable agent class" if a["uptake"] == "high"
                                         else "restricted agent class"),
}


def _slug(s):
    return s.replace(" ", "_")


# -- corpus -----------------------------------------------------------------------
@dataclass
class SynthCorpus:
    molecules: list
    texts: dict                       # text id -> string (view texts, ontology, relations)
    view_texts: dict                  # (mol id, ViewKind) -> text id
    triplets: list
    splits: dict                      # mol id -> "train" | "val" | "test"
    spec: CorpusSpec = None
    attributes: dict = field(default_factory=dict)

    @property
    def mol_by_id(self):
        return {m.id: m for m in self.molecules}

    def kg(self):
        return KnowledgeGraph(self.triplets, self.mol_by_id, self.texts)

    def split_molecules(self, split):
        return [m for m in self.molecules if self.splits.get(m.id) == split]

    def views(self):
        return sorted({v for _, v in self.view_texts}, key=lambda v: list(ViewKind).index(v))

    def text_for(self, mol_id, view):
        return self.texts[self.view_texts[(mol_id, ViewKind(view))]]

    def stage1_pairs(self, split=None):
        """One (molecule, text) pair per molecule, views assigned round-robin."""
        views = self.views()
        pairs = []
        for i, m in enumerate(self.molecules):
            if split is not None and self.splits.get(m.id) != split:
                continue
            pairs.append((m, self.text_for(m.id, views[i % len(views)])))
        return pairs

    def all_texts(self):
        return list(self.texts.values())

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        write_molecules(os.path.join(out_dir, "molecules.jsonl"), self.molecules)
        back = {tid: key for key, tid in self.view_texts.items()}
        with open(os.path.join(out_dir, "texts.jsonl"), "w", encoding="utf-8") as fh:
            for tid, text in self.texts.items():
                rec = {"id": tid, "text": text}
                if tid in back:
                    rec["mol"], rec["view"] = back[tid][0], back[tid][1].value
                fh.write(json.dumps(rec) + "\n")
        write_triplets(os.path.join(out_dir, "triplets.tsv"), self.triplets)
        with open(os.path.join(out_dir, "splits.tsv"), "w", encoding="utf-8") as fh:
            for m in self.molecules:
                fh.write(f"{m.id}\t{self.splits[m.id]}\n")


def build_synth_kg(molecules, attributes, views):
    """Texts and triplets of all three categories for a generated molecule set."""
    texts, view_texts, triplets = {}, {}, []
    rel_ids = {}
    for v in views:
        rid = f"rel:{v.value}"
        texts[rid] = VIEW_RELATIONS[v]
        rel_ids[v] = rid
    texts["rel:similar"] = SIMILAR_RELATION
    texts["rel:isa"] = ISA_RELATION
    for m in molecules:
        attrs = attributes[m.id]
        for v in views:
            tid = f"{m.id}:{v.value}"
            texts[tid] = render_text(v, attrs)
            view_texts[(m.id, v)] = tid
            triplets.append(Triplet(EntityRef.mol(m.id), rel_ids[v], EntityRef.text(tid)))
    # molecule-molecule: chain molecules sharing a coarse signature
    groups = {}
    for m in molecules:
        chem = attributes[m.id][ViewKind.CHEMICAL]
        sig = (chem["rings"], chem["type3"], m.n_atoms // 3)
        groups.setdefault(sig, []).append(m.id)
    for sig in sorted(groups, key=str):
        ids = groups[sig]
        for a, b in zip(ids, ids[1:]):
            triplets.append(Triplet(EntityRef.mol(a), "rel:similar", EntityRef.mol(b)))
    # text-text: view text "is a" coarse ontology class
    for m in molecules:
        attrs = attributes[m.id]
        for v in views:
            onto = _ONTOLOGY[v](attrs[v])
            oid = f"onto:{_slug(onto)}"
            texts[oid] = onto
            triplets.append(Triplet(EntityRef.text(view_texts[(m.id, v)]), "rel:isa", EntityRef.text(oid)))
    return texts, view_texts, triplets


def assign_splits(molecules, ratio=(7, 1, 2)):
    """Group molecules by structural hash and fill train/val/test in hash order.

    Whole groups move together, so each split size is within one group of
    its target.
    """
    total = float(sum(ratio))
    r = [x / total for x in ratio]
    groups = {}
    for m in molecules:
        groups.setdefault(structural_hash(m), []).append(m.id)
    n = len(molecules)
    bounds = (n * r[0], n * (r[0] + r[1]))
    out, filled = {}, 0
    for h in sorted(groups):
        ids = groups[h]
        split = "train" if filled < bounds[0] else "val" if filled < bounds[1] else "test"
        for mid in ids:
            out[mid] = split
        filled += len(ids)
    return out


def generate_corpus(spec):
    molecules = gen_molecules(spec)
    attributes = {m.id: derive_attributes(m, spec.n_atom_types) for m in molecules}
    texts, view_texts, triplets = build_synth_kg(molecules, attributes, spec.views)
    splits = assign_splits(molecules, spec.split_ratio)
    return SynthCorpus(molecules, texts, view_texts, triplets, splits, spec, attributes)


def load_corpus(data_dir):
    """Read a corpus directory written by :meth:`SynthCorpus.write` (or by hand)."""
    molecules = parse_molecules(os.path.join(data_dir, "molecules.jsonl"))
    texts, view_texts = {}, {}
    with open(os.path.join(data_dir, "texts.jsonl"), encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            texts[rec["id"]] = rec["text"]
            if "mol" in rec and "view" in rec:
                view_texts[(rec["mol"], ViewKind(rec["view"]))] = rec["id"]
    trip_path = os.path.join(data_dir, "triplets.tsv")
    triplets = read_triplets(trip_path) if os.path.exists(trip_path) else []
    split_path = os.path.join(data_dir, "splits.tsv")
    if os.path.exists(split_path):
        with open(split_path, encoding="utf-8") as fh:
            splits = dict(line.rstrip("\n").split("\t") for line in fh if line.strip())
    else:
        splits = assign_splits(molecules)
    return SynthCorpus(molecules, texts, view_texts, triplets, splits)
