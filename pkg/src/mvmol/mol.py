"""Molecule data model (atoms, bonds, 3D coordinates) and derived geometry.

Also defines the linear molecule notation used by generation: atom tokens
``a<type>`` in index order, a ``|`` separator, then bonds ``i - j``::

    a3 a1 a0 | 0 - 1 1 - 2
"""
import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError
from .tensor import kernels
from .text import tokenize

DEFAULT_ATOM_TYPES = 8


@dataclass(frozen=True, eq=False)
class Molecule:
    id: str
    atoms: tuple
    bonds: tuple
    coords: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        atoms = tuple(int(a) for a in self.atoms)
        if not atoms:
            raise ValidationError("molecule needs at least one atom", "atoms")
        if any(a < 0 for a in atoms):
            raise ValidationError("atom types must be non-negative", "atoms")
        pairs = set()
        for b in self.bonds:
            if len(b) != 2:
                raise ValidationError(f"bond {b!r} is not a pair", "bonds")
            i, j = int(b[0]), int(b[1])
            if not (0 <= i < len(atoms) and 0 <= j < len(atoms)):
                raise ValidationError(f"bond ({i}, {j}) references a missing atom", "bonds")
            if i == j:
                raise ValidationError(f"bond ({i}, {j}) is a self loop", "bonds")
            pairs.add((min(i, j), max(i, j)))
        coords = np.array(self.coords, dtype=np.float64)
        if coords.shape != (len(atoms), 3):
            raise ValidationError(f"expected shape ({len(atoms)}, 3), got {coords.shape}", "coords")
        if not np.all(np.isfinite(coords)):
            raise ValidationError("coordinates must be finite", "coords")
        coords.flags.writeable = False
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "bonds", tuple(sorted(pairs)))
        object.__setattr__(self, "coords", coords)

    @property
    def n_atoms(self):
        return len(self.atoms)

    def degrees(self):
        deg = np.zeros(self.n_atoms, dtype=np.int64)
        for i, j in self.bonds:
            deg[i] += 1
            deg[j] += 1
        return deg

    def adjacency(self):
        adj = np.zeros((self.n_atoms, self.n_atoms), dtype=bool)
        for i, j in self.bonds:
            adj[i, j] = adj[j, i] = True
        return adj

    def n_components(self):
        parent = list(range(self.n_atoms))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for i, j in self.bonds:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[ri] = rj
        return len({find(i) for i in range(self.n_atoms)})

    def ring_count(self):
        """Cyclomatic number |E| - |V| + components."""
        return len(self.bonds) - self.n_atoms + self.n_components()

    def validate(self, strict=False):
        if strict and self.n_components() != 1:
            raise ValidationError("molecule graph is disconnected", "bonds")
        return self

    def permuted(self, perm):
        """Relabel atoms: new atom ``k`` is old atom ``perm[k]``."""
        perm = list(perm)
        inv = {old: new for new, old in enumerate(perm)}
        return Molecule(
            self.id,
            [self.atoms[p] for p in perm],
            [(inv[i], inv[j]) for i, j in self.bonds],
            self.coords[perm],
        )

    def with_coords(self, coords):
        return Molecule(self.id, self.atoms, self.bonds, coords)

    def to_json(self):
        return {
            "id": self.id,
            "atoms": list(self.atoms),
            "bonds": [list(b) for b in self.bonds],
            "coords": [[float(v) for v in row] for row in self.coords],
        }


def molecule_from_json(obj, strict=False):
    for key in ("id", "atoms", "bonds", "coords"):
        if key not in obj:
            raise ValidationError("missing field", key)
    return Molecule(str(obj["id"]), obj["atoms"], obj["bonds"], obj["coords"]).validate(strict)


def parse_molecules(path, strict=False):
    """Read a JSON-lines molecule file; blank lines are skipped."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", lineno)
            try:
                out.append(molecule_from_json(obj, strict))
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}", exc.field) from None
    return out


def write_molecules(path, molecules):
    with open(path, "w", encoding="utf-8") as fh:
        for m in molecules:
            fh.write(json.dumps(m.to_json()) + "\n")


def distances(m):
    """Pairwise Euclidean distance matrix (float64), cached on the molecule."""
    d = m._cache.get("dist")
    if d is None:
        d = kernels.pairwise_distances(m.coords)
        d.flags.writeable = False
        m._cache["dist"] = d
    return d


def structural_hash(m):
    """64-bit key over (type histogram, degree sequence, ring count).

    Invariant under atom relabeling and any change of coordinates.
    """
    key = (
        tuple(sorted(Counter(m.atoms).items())),
        tuple(sorted(m.degrees().tolist())),
        m.ring_count(),
    )
    digest = hashlib.blake2b(repr(key).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


# -- linear notation ------------------------------------------------------------
def to_linear(m):
    atoms = " ".join(f"a{t}" for t in m.atoms)
    bonds = " ".join(f"{i} - {j}" for i, j in m.bonds)
    return f"{atoms} | {bonds}".rstrip()


def parse_linear(s, mol_id="generated"):
    """Parse the linear notation back into a molecule with zero coordinates.

    Raises :class:`ParseError` on malformed input.
    """
    toks = tokenize(s)
    if "|" in toks:
        cut = toks.index("|")
        atom_toks, bond_toks = toks[:cut], toks[cut + 1:]
    else:
        atom_toks, bond_toks = toks, []
    if not atom_toks:
        raise ParseError("no atoms")
    atoms = []
    for t in atom_toks:
        if len(t) < 2 or t[0] != "a" or not t[1:].isdigit():
            raise ParseError(f"bad atom token {t!r}")
        atoms.append(int(t[1:]))
    if len(bond_toks) % 3:
        raise ParseError("truncated bond list")
    bonds = []
    for k in range(0, len(bond_toks), 3):
        i, dash, j = bond_toks[k:k + 3]
        if dash != "-" or not i.isdigit() or not j.isdigit():
            raise ParseError(f"bad bond {' '.join(bond_toks[k:k + 3])!r}")
        bonds.append((int(i), int(j)))
    if len({(min(b), max(b)) for b in bonds}) != len(bonds):
        raise ParseError("duplicate bond")
    try:
        return Molecule(mol_id, atoms, bonds, np.zeros((len(atoms), 3)))
    except ValidationError as exc:
        raise ParseError(str(exc)) from None


def is_valid_linear(s):
    try:
        parse_linear(s)
    except ParseError:
        return False
    return True
