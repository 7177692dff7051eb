"""Atom/bond feature vectors and message-passing index structures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .smiles import MolGraph, implicit_h_count, parse

__all__ = [
    "ATOM_DIM",
    "BOND_DIM",
    "FEATURE_GROUPS",
    "FeatureGroup",
    "FeaturizedGraph",
    "atom_features",
    "bond_features",
    "featurize_graph",
    "featurize_smiles",
    "is_conjugated",
]

ELEMENTS = ("B", "C", "N", "O", "F", "Si", "P", "S", "Cl", "Se", "Br", "I")
HYBRIDIZATIONS = ("sp", "sp2", "sp3", "other")
BOND_ORDERS = ("single", "double", "triple", "aromatic")
# heteroatoms whose lone pair can conjugate with an adjacent pi bond
_LONE_PAIR_DONORS = frozenset({"N", "O", "S", "Se", "P"})


@dataclass(frozen=True)
class FeatureGroup:
    name: str
    kind: str  # "atom" or "bond"
    start: int
    stop: int

    @property
    def columns(self) -> slice:
        return slice(self.start, self.stop)


def _layout(kind: str, widths: list[tuple[str, int]]) -> list[FeatureGroup]:
    groups, pos = [], 0
    for name, width in widths:
        groups.append(FeatureGroup(name, kind, pos, pos + width))
        pos += width
    return groups


_ATOM_GROUPS = _layout("atom", [
    ("element", len(ELEMENTS) + 1),
    ("degree", 6),
    ("formal_charge", 1),
    ("hydrogens", 5),
    ("aromatic", 1),
    ("atom_in_ring", 1),
    ("hybridization", len(HYBRIDIZATIONS)),
    ("chirality", 1),
    ("radical", 1),
])
_BOND_GROUPS = _layout("bond", [
    ("bond_order", len(BOND_ORDERS)),
    ("conjugated", 1),
    ("bond_in_ring", 1),
    ("bond_stereo", 1),
])

#: The 13 feature groups (9 atom + 4 bond), keyed by name.
FEATURE_GROUPS: dict[str, FeatureGroup] = {g.name: g for g in _ATOM_GROUPS + _BOND_GROUPS}
ATOM_DIM = _ATOM_GROUPS[-1].stop
BOND_DIM = _BOND_GROUPS[-1].stop
assert ATOM_DIM == 33 and BOND_DIM == 7 and len(FEATURE_GROUPS) == 13


@dataclass(frozen=True)
class FeaturizedGraph:
    """Dense features plus directed-edge structure for one molecule.

    ``edge_index[k] = (center, neighbor)``: edge ``k`` carries a message from
    ``neighbor`` into ``center``. Edges are sorted by (center, neighbor), so
    the edges of atom ``v`` occupy ``segments[v]:segments[v + 1]``.
    """

    atom_features: np.ndarray  # (N, ATOM_DIM)
    edge_index: np.ndarray  # (E, 2) int
    edge_features: np.ndarray  # (E, BOND_DIM)
    segments: np.ndarray  # (N + 1,) offsets
    atom_mask: np.ndarray  # (N,)
    labels: tuple[str, ...] = ()
    smiles: str = ""

    @property
    def num_atoms(self) -> int:
        return self.atom_features.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edge_index.shape[0]


def _pi_atom(g: MolGraph, i: int, exclude: int | None = None) -> bool:
    return any(
        g.bonds[b].order != "single" for _, b in g.adjacency[i] if b != exclude)


def _hybridization(g: MolGraph, i: int) -> str:
    if g.atoms[i].element not in ELEMENTS:
        return "other"
    orders = [g.bonds[b].order for _, b in g.adjacency[i]]
    if "triple" in orders or orders.count("double") >= 2:
        return "sp"
    if "double" in orders or "aromatic" in orders:
        return "sp2"
    return "sp3"


def atom_features(g: MolGraph, i: int) -> np.ndarray:
    atom = g.atoms[i]
    vec = np.zeros(ATOM_DIM)
    grp = FEATURE_GROUPS

    el = ELEMENTS.index(atom.element) if atom.element in ELEMENTS else len(ELEMENTS)
    vec[grp["element"].start + el] = 1.0
    vec[grp["degree"].start + min(g.degree(i), 5)] = 1.0
    vec[grp["formal_charge"].start] = float(atom.formal_charge)
    vec[grp["hydrogens"].start + min(implicit_h_count(g, i), 4)] = 1.0
    vec[grp["aromatic"].start] = float(atom.is_aromatic)
    vec[grp["atom_in_ring"].start] = float(atom.in_ring)
    vec[grp["hybridization"].start + HYBRIDIZATIONS.index(_hybridization(g, i))] = 1.0
    vec[grp["chirality"].start] = float(bool(atom.chirality))
    # radical slot stays 0: inputs are closed-shell
    return vec


def is_conjugated(g: MolGraph, e: int) -> bool:
    """Conjugation flag for bond ``e``.

    Aromatic bonds are conjugated. A single bond is conjugated when one end
    carries a multiple/aromatic bond and the other end does too or is a
    lone-pair heteroatom (N, O, S, Se, P). A double/triple bond is
    conjugated when it is attached through a single bond to such an atom.
    """
    bond = g.bonds[e]
    if bond.order == "aromatic":
        return True

    def partner_ok(atom: int, via: int) -> bool:
        return (_pi_atom(g, atom, exclude=via)
                or g.atoms[atom].element in _LONE_PAIR_DONORS)

    if bond.order == "single":
        a_pi = _pi_atom(g, bond.a, exclude=e)
        b_pi = _pi_atom(g, bond.b, exclude=e)
        if a_pi and (b_pi or g.atoms[bond.b].element in _LONE_PAIR_DONORS):
            return True
        if b_pi and (a_pi or g.atoms[bond.a].element in _LONE_PAIR_DONORS):
            return True
        return False

    for end in (bond.a, bond.b):
        for nbr, b in g.adjacency[end]:
            if b != e and g.bonds[b].order == "single" and partner_ok(nbr, b):
                return True
    return False


def bond_features(g: MolGraph, e: int) -> np.ndarray:
    bond = g.bonds[e]
    vec = np.zeros(BOND_DIM)
    grp = FEATURE_GROUPS
    vec[grp["bond_order"].start + BOND_ORDERS.index(bond.order)] = 1.0
    vec[grp["conjugated"].start] = float(is_conjugated(g, e))
    vec[grp["bond_in_ring"].start] = float(bond.in_ring)
    vec[grp["bond_stereo"].start] = float(bond.stereo != "none")
    return vec


def featurize_graph(g: MolGraph) -> FeaturizedGraph:
    n = g.num_atoms
    x = np.stack([atom_features(g, i) for i in range(n)]) if n else np.zeros((0, ATOM_DIM))
    bond_vecs = [bond_features(g, e) for e in range(g.num_bonds)]

    directed = sorted(
        (v, u, bi) for v in range(n) for u, bi in g.adjacency[v])
    if directed:
        edge_index = np.array([(v, u) for v, u, _ in directed], dtype=np.int64)
        edge_feats = np.stack([bond_vecs[bi] for _, _, bi in directed])
    else:
        edge_index = np.zeros((0, 2), dtype=np.int64)
        edge_feats = np.zeros((0, BOND_DIM))
    counts = np.bincount(edge_index[:, 0], minlength=n) if n else np.zeros(0, dtype=np.int64)
    segments = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    labels = tuple(f"{a.element}{a.index}" for a in g.atoms)
    return FeaturizedGraph(x, edge_index, edge_feats, segments, np.ones(n), labels, g.smiles)


def featurize_smiles(smiles: str) -> FeaturizedGraph:
    return featurize_graph(parse(smiles))
