"""SMILES tokenizer, parser and writer for the subset used by monomer datasets.

Supported: organic-subset atoms, bracket atoms with charge / explicit H /
chirality, single/double/triple/aromatic bonds, ``/`` and ``\\`` markers,
branches and ring closures (digits and ``%nn``). Rejected: isotopes, the
wildcard ``*`` and multi-fragment (``.``) input.

Aromaticity is purely syntactic (lowercase symbols); no kekulization.
"""

from __future__ import annotations

import hashlib
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable

__all__ = [
    "SmilesError",
    "Token",
    "AtomNode",
    "BondEdge",
    "MolGraph",
    "tokenize",
    "parse",
    "implicit_h_count",
    "perceive_rings",
    "write_smiles",
    "graph_signature",
    "is_isomorphic",
]


class SmilesError(ValueError):
    """Raised for any malformed or unsupported SMILES input."""

    def __init__(self, message: str, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


ORGANIC_SUBSET = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
AROMATIC_BRACKET = ("se", "as", "te", "b", "c", "n", "o", "p", "s")

# Allowed valences for implicit-hydrogen completion, lowest first.
DEFAULT_VALENCES = {
    "B": (3,),
    "C": (4,),
    "N": (3, 5),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
}

_ELEMENTS = frozenset(
    """H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni
    Cu Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe
    Cs Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg
    Tl Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr""".split()
)

BOND_ORDERS = ("single", "double", "triple", "aromatic")
_BOND_SYMBOLS = {"-": "single", "=": "double", "#": "triple", ":": "aromatic",
                 "/": "single", "\\": "single"}
_BOND_VALENCE = {"single": 1.0, "double": 2.0, "triple": 3.0, "aromatic": 1.5}


@dataclass(frozen=True)
class Token:
    kind: str  # atom | bracket_atom | bond | branch_open | branch_close | ring | dot
    text: str
    position: int


@dataclass(frozen=True)
class AtomNode:
    element: str
    is_aromatic: bool = False
    formal_charge: int = 0
    explicit_h: int | None = None
    in_ring: bool = False
    index: int = 0
    chirality: str = ""


@dataclass(frozen=True)
class BondEdge:
    a: int
    b: int
    order: str = "single"
    stereo: str = "none"  # none | up | down
    in_ring: bool = False

    def other(self, i: int) -> int:
        return self.b if i == self.a else self.a


@dataclass
class MolGraph:
    """Heavy-atom molecular graph.

    ``flags`` collects diagnostics such as over-valent atoms; it is the only
    mutable part of the graph.
    """

    atoms: tuple[AtomNode, ...]
    bonds: tuple[BondEdge, ...]
    adjacency: tuple[tuple[tuple[int, int], ...], ...]
    smiles: str = ""
    flags: set = field(default_factory=set, compare=False)

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    @property
    def num_bonds(self) -> int:
        return len(self.bonds)

    def neighbors(self, i: int) -> list[int]:
        return [n for n, _ in self.adjacency[i]]

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def bond_between(self, i: int, j: int) -> BondEdge | None:
        for n, b in self.adjacency[i]:
            if n == j:
                return self.bonds[b]
        return None


# ---------------------------------------------------------------- tokenizing


def tokenize(smiles: str) -> list[Token]:
    """Split a SMILES string into lexemes.

    The concatenation of all token texts equals the input.
    """
    if not isinstance(smiles, str) or not smiles:
        raise SmilesError("empty SMILES")
    if not smiles.isascii():
        raise SmilesError("SMILES must be ASCII")

    tokens: list[Token] = []
    i, n = 0, len(smiles)
    while i < n:
        ch = smiles[i]
        if ch == "[":
            end = smiles.find("]", i + 1)
            if end < 0:
                raise SmilesError("unterminated bracket atom", i)
            text = smiles[i:end + 1]
            _parse_bracket(text, i)  # validate eagerly
            tokens.append(Token("bracket_atom", text, i))
            i = end + 1
        elif smiles.startswith(("Cl", "Br"), i):
            tokens.append(Token("atom", smiles[i:i + 2], i))
            i += 2
        elif ch in "BCNOPSFI" or ch in "bcnops":
            tokens.append(Token("atom", ch, i))
            i += 1
        elif ch in _BOND_SYMBOLS:
            tokens.append(Token("bond", ch, i))
            i += 1
        elif ch == "(":
            tokens.append(Token("branch_open", ch, i))
            i += 1
        elif ch == ")":
            tokens.append(Token("branch_close", ch, i))
            i += 1
        elif ch.isdigit():
            tokens.append(Token("ring", ch, i))
            i += 1
        elif ch == "%":
            pair = smiles[i + 1:i + 3]
            if len(pair) == 2 and pair.isdigit():
                tokens.append(Token("ring", smiles[i:i + 3], i))
                i += 3
            else:
                raise SmilesError("'%' must be followed by two digits", i)
        elif ch == ".":
            tokens.append(Token("dot", ch, i))
            i += 1
        elif ch == "*":
            raise SmilesError("wildcard atom '*' is not supported", i)
        else:
            raise SmilesError(f"unknown character {ch!r}", i)
    return tokens


def _parse_bracket(text: str, position: int) -> dict:
    body = text[1:-1]
    if not body:
        raise SmilesError("empty bracket atom", position)
    if body[0].isdigit():
        raise SmilesError("isotope labels are not supported", position)
    if body[0] == "*":
        raise SmilesError("wildcard atom '*' is not supported", position)

    aromatic = False
    if body[:2] in AROMATIC_BRACKET:
        symbol, aromatic = body[:2].capitalize(), True
    elif body[0] in AROMATIC_BRACKET:
        symbol, aromatic = body[0].upper(), True
    elif len(body) >= 2 and body[1].islower() and body[:2] in _ELEMENTS:
        symbol = body[:2]
    elif body[0] in _ELEMENTS:
        symbol = body[0]
    else:
        raise SmilesError(f"malformed bracket atom {text!r}", position)
    j = len(symbol)

    chirality = ""
    if body.startswith("@@", j):
        chirality, j = "@@", j + 2
    elif body.startswith("@", j):
        chirality, j = "@", j + 1

    hcount = 0
    if body.startswith("H", j):
        j += 1
        digits = ""
        while j < len(body) and body[j].isdigit():
            digits += body[j]
            j += 1
        hcount = int(digits) if digits else 1

    charge = 0
    if j < len(body) and body[j] in "+-":
        sign = 1 if body[j] == "+" else -1
        k = j + 1
        digits = ""
        while k < len(body) and body[k].isdigit():
            digits += body[k]
            k += 1
        if digits:
            charge = sign * int(digits)
        else:
            # "++" style repeated signs
            count = 1
            while k < len(body) and body[k] == body[j]:
                count += 1
                k += 1
            charge = sign * count
        j = k

    if j < len(body) and body[j] == ":":
        k = j + 1
        while k < len(body) and body[k].isdigit():
            k += 1
        if k == j + 1:
            raise SmilesError(f"malformed atom class in {text!r}", position)
        j = k

    if j != len(body):
        raise SmilesError(f"malformed bracket atom {text!r}", position)
    return {"element": symbol, "aromatic": aromatic, "chirality": chirality,
            "hcount": hcount, "charge": charge}


# ------------------------------------------------------------------- parsing


def parse(smiles: str) -> MolGraph:
    """Parse a single-molecule SMILES string into a :class:`MolGraph`.

    Ring membership is perceived before returning.
    """
    tokens = tokenize(smiles)
    atoms: list[AtomNode] = []
    bonds: list[BondEdge] = []
    pairs: set[tuple[int, int]] = set()
    stack: list[int] = []
    open_rings: dict[str, tuple[int, str | None, int]] = {}
    prev: int | None = None
    pending: str | None = None  # bond symbol waiting for its second atom
    pending_pos = 0

    def add_bond(a: int, b: int, symbol: str | None, pos: int) -> None:
        if a == b:
            raise SmilesError("ring closure bonds an atom to itself", pos)
        key = (min(a, b), max(a, b))
        if key in pairs:
            raise SmilesError("duplicate bond between the same atom pair", pos)
        if symbol is None:
            order = "aromatic" if atoms[a].is_aromatic and atoms[b].is_aromatic else "single"
        else:
            order = _BOND_SYMBOLS[symbol]
        if order == "aromatic" and not (atoms[a].is_aromatic and atoms[b].is_aromatic):
            raise SmilesError("aromatic bond between non-aromatic atoms", pos)
        stereo = {"/": "up", "\\": "down"}.get(symbol or "", "none")
        pairs.add(key)
        bonds.append(BondEdge(a, b, order, stereo))

    for tok in tokens:
        if tok.kind in ("atom", "bracket_atom"):
            idx = len(atoms)
            if tok.kind == "atom":
                sym = tok.text
                aromatic = sym.islower()
                atoms.append(AtomNode(element=sym.capitalize(), is_aromatic=aromatic, index=idx))
            else:
                info = _parse_bracket(tok.text, tok.position)
                atoms.append(AtomNode(
                    element=info["element"], is_aromatic=info["aromatic"],
                    formal_charge=info["charge"], explicit_h=info["hcount"],
                    index=idx, chirality=info["chirality"],
                ))
            if prev is not None:
                add_bond(prev, idx, pending, tok.position)
            elif pending is not None:
                raise SmilesError("bond symbol without a preceding atom", pending_pos)
            pending = None
            prev = idx
        elif tok.kind == "bond":
            if pending is not None:
                raise SmilesError("two consecutive bond symbols", tok.position)
            if prev is None:
                raise SmilesError("bond symbol without a preceding atom", tok.position)
            pending, pending_pos = tok.text, tok.position
        elif tok.kind == "branch_open":
            if prev is None:
                raise SmilesError("branch opened before any atom", tok.position)
            if pending is not None:
                raise SmilesError("bond symbol before '('", tok.position)
            stack.append(prev)
        elif tok.kind == "branch_close":
            if not stack:
                raise SmilesError("unmatched ')'", tok.position)
            if pending is not None:
                raise SmilesError("dangling bond symbol before ')'", tok.position)
            prev = stack.pop()
        elif tok.kind == "ring":
            if prev is None:
                raise SmilesError("ring closure before any atom", tok.position)
            label = tok.text.lstrip("%")
            if label in open_rings:
                other, other_sym, _ = open_rings.pop(label)
                symbol = pending if pending is not None else other_sym
                if pending is not None and other_sym is not None and pending != other_sym:
                    raise SmilesError("conflicting ring-closure bond symbols", tok.position)
                add_bond(other, prev, symbol, tok.position)
            else:
                open_rings[label] = (prev, pending, tok.position)
            pending = None
        elif tok.kind == "dot":
            raise SmilesError("multi-fragment SMILES ('.') is not supported", tok.position)

    if pending is not None:
        raise SmilesError("dangling bond symbol at end of input", pending_pos)
    if stack:
        raise SmilesError("unmatched '('")
    if open_rings:
        label, (_, _, pos) = next(iter(open_rings.items()))
        raise SmilesError(f"dangling ring closure {label!r}", pos)

    graph = _assemble(atoms, bonds, smiles)
    graph = perceive_rings(graph)
    _check_aromatic_rings(graph)
    for i in range(graph.num_atoms):
        implicit_h_count(graph, i)
    return graph


def _assemble(atoms: list[AtomNode], bonds: list[BondEdge], smiles: str = "") -> MolGraph:
    adj: list[list[tuple[int, int]]] = [[] for _ in atoms]
    for bi, bond in enumerate(bonds):
        adj[bond.a].append((bond.b, bi))
        adj[bond.b].append((bond.a, bi))
    return MolGraph(tuple(atoms), tuple(bonds), tuple(tuple(a) for a in adj), smiles)


def _check_aromatic_rings(g: MolGraph) -> None:
    """Every aromatic atom must sit on an aromatic cycle of at least 5 atoms."""
    for atom in g.atoms:
        if not atom.is_aromatic:
            continue
        size = _smallest_aromatic_cycle(g, atom.index)
        if size is None:
            raise SmilesError(f"aromatic atom {atom.index} is not in a ring")
        if size < 5:
            raise SmilesError(
                f"invalid aromatic ring of size {size} at atom {atom.index}")


def _smallest_aromatic_cycle(g: MolGraph, start: int) -> int | None:
    best = None
    for first, bi in g.adjacency[start]:
        if g.bonds[bi].order != "aromatic":
            continue
        # BFS from `first` back to `start` without using bond `bi`
        dist = {first: 1}
        queue = deque([first])
        while queue:
            cur = queue.popleft()
            for nxt, nb in g.adjacency[cur]:
                if nb == bi or g.bonds[nb].order != "aromatic":
                    continue
                if nxt == start:
                    length = dist[cur] + 1
                    if best is None or length < best:
                        best = length
                    queue.clear()
                    break
                if nxt not in dist:
                    dist[nxt] = dist[cur] + 1
                    queue.append(nxt)
    return best


def perceive_rings(g: MolGraph) -> MolGraph:
    """Flag atoms and bonds lying on at least one simple cycle.

    Each non-tree edge of a DFS spanning forest closes a fundamental cycle;
    the union of those cycles is exactly the set of ring bonds.
    """
    n = g.num_atoms
    parent = [-1] * n
    parent_bond = [-1] * n
    depth = [-1] * n
    tree_bonds: set[int] = set()
    for root in range(n):
        if depth[root] >= 0:
            continue
        depth[root] = 0
        stack = [root]
        while stack:
            v = stack.pop()
            for u, bi in g.adjacency[v]:
                if depth[u] < 0:
                    depth[u] = depth[v] + 1
                    parent[u] = v
                    parent_bond[u] = bi
                    tree_bonds.add(bi)
                    stack.append(u)

    ring_bonds: set[int] = set()
    for bi, bond in enumerate(g.bonds):
        if bi in tree_bonds:
            continue
        ring_bonds.add(bi)
        u, v = bond.a, bond.b
        while u != v:
            if depth[u] < depth[v]:
                u, v = v, u
            ring_bonds.add(parent_bond[u])
            u = parent[u]

    ring_atoms = {x for bi in ring_bonds for x in (g.bonds[bi].a, g.bonds[bi].b)}
    atoms = tuple(replace(a, in_ring=a.index in ring_atoms) for a in g.atoms)
    bonds = tuple(replace(b, in_ring=i in ring_bonds) for i, b in enumerate(g.bonds))
    return MolGraph(atoms, bonds, g.adjacency, g.smiles, set(g.flags))


def bond_order_sum(g: MolGraph, i: int) -> float:
    return sum(_BOND_VALENCE[g.bonds[b].order] for _, b in g.adjacency[i])


def implicit_h_count(g: MolGraph, i: int) -> int:
    """Number of implicit hydrogens on atom ``i``.

    Bracket atoms return their explicit count. Organic-subset atoms use the
    lowest allowed valence that fits the bond-order sum (aromatic bonds count
    1.5); over-valent atoms return 0 and add ``("overvalent", i)`` to
    ``g.flags``.
    """
    atom = g.atoms[i]
    if atom.explicit_h is not None:
        return atom.explicit_h
    valences = DEFAULT_VALENCES.get(atom.element)
    if valences is None:
        return 0
    used = bond_order_sum(g, i)
    for valence in valences:
        if used <= valence:
            return int(math.floor(valence - used))
    # aromatic rounding slack (e.g. ring-fusion carbons with 3 aromatic bonds)
    if used - valences[-1] < 1.0:
        return 0
    g.flags.add(("overvalent", i))
    return 0


# ------------------------------------------------------------------- writing


def write_smiles(g: MolGraph, start: int = 0) -> str:
    """Emit a (non-canonical) SMILES string for a connected graph.

    Traversal starts at atom ``start``; smaller branches are written first.
    Stereo markers and chirality are not written.
    """
    if g.num_atoms == 0:
        raise SmilesError("cannot write an empty graph")
    n = g.num_atoms
    visited = [False] * n
    order: list[int] = []
    children: dict[int, list[tuple[int, int]]] = {i: [] for i in range(n)}
    closures: dict[int, list[int]] = {i: [] for i in range(n)}  # atom -> bond ids
    tree_bonds: set[int] = set()

    # iterative DFS that records a spanning tree in visit order
    stack: list[tuple[int, int]] = [(start, -1)]
    while stack:
        v, via = stack.pop()
        if visited[v]:
            continue
        visited[v] = True
        order.append(v)
        if via >= 0:
            tree_bonds.add(via)
            parent = g.bonds[via].other(v)
            children[parent].append((v, via))
        for u, bi in reversed(g.adjacency[v]):
            if not visited[u]:
                stack.append((u, bi))
    if not all(visited):
        raise SmilesError("cannot write a disconnected graph")

    rank = {a: k for k, a in enumerate(order)}
    size = {a: 1 for a in order}
    for a in reversed(order):
        for u, _ in children[a]:
            size[a] += size[u]
    for a in children:
        children[a].sort(key=lambda c: size[c[0]])
    for bi, bond in enumerate(g.bonds):
        if bi not in tree_bonds:
            closures[bond.a].append(bi)
            closures[bond.b].append(bi)

    digits_in_use: dict[int, int] = {}
    free: list[int] = []
    next_digit = [1]

    def take_digit() -> int:
        if free:
            free.sort()
            return free.pop(0)
        d = next_digit[0]
        next_digit[0] += 1
        return d

    def label(d: int) -> str:
        return str(d) if d < 10 else f"%{d:02d}"

    out: list[str] = []

    def emit(v: int) -> None:
        out.append(_atom_text(g, v))
        for bi in sorted(closures[v], key=lambda b: rank[g.bonds[b].other(v)]):
            if bi in digits_in_use:
                d = digits_in_use.pop(bi)
                out.append(_bond_text(g, bi) + label(d))
                free.append(d)
            else:
                d = take_digit()
                digits_in_use[bi] = d
                out.append(_bond_text(g, bi) + label(d))
        kids = children[v]
        for k, (u, bi) in enumerate(kids):
            last = k == len(kids) - 1
            if not last:
                out.append("(")
            out.append(_bond_text(g, bi))
            emit(u)
            if not last:
                out.append(")")

    # recursion depth is bounded by the longest chain; fine for monomer dimers
    emit(order[0])
    return "".join(out)


def _atom_text(g: MolGraph, i: int) -> str:
    atom = g.atoms[i]
    sym = atom.element.lower() if atom.is_aromatic else atom.element
    needs_bracket = (
        atom.explicit_h is not None
        or atom.formal_charge != 0
        or atom.element not in DEFAULT_VALENCES
        or (atom.is_aromatic and atom.element not in ("B", "C", "N", "O", "P", "S"))
    )
    if not needs_bracket:
        return sym
    text = "[" + sym
    h = atom.explicit_h if atom.explicit_h is not None else 0
    if h:
        text += "H" if h == 1 else f"H{h}"
    q = atom.formal_charge
    if q:
        text += ("+" if q > 0 else "-") + (str(abs(q)) if abs(q) > 1 else "")
    return text + "]"


def _bond_text(g: MolGraph, bi: int) -> str:
    bond = g.bonds[bi]
    if bond.order == "double":
        return "="
    if bond.order == "triple":
        return "#"
    if bond.order == "aromatic":
        return ""
    if g.atoms[bond.a].is_aromatic and g.atoms[bond.b].is_aromatic:
        return "-"
    return ""


# --------------------------------------------------------------- isomorphism


def _digest(obj) -> str:
    return hashlib.sha1(repr(obj).encode()).hexdigest()[:16]


def graph_signature(g: MolGraph, iterations: int | None = None) -> tuple:
    """Canonical invariant used to compare molecules.

    Initial atom labels are (element, aromatic, charge, degree, H count,
    sorted bond orders); they are refined by neighbor hashing
    (Weisfeiler-Lehman style). The signature is the sorted label multiset
    plus the sorted multiset of bond labels.
    """
    n = g.num_atoms
    labels = []
    for i, atom in enumerate(g.atoms):
        orders = tuple(sorted(g.bonds[b].order for _, b in g.adjacency[i]))
        labels.append(_digest((atom.element, atom.is_aromatic, atom.formal_charge,
                               g.degree(i), implicit_h_count(g, i), orders)))
    rounds = n if iterations is None else iterations
    for _ in range(rounds):
        new = []
        for i in range(n):
            nbrs = sorted((g.bonds[b].order, labels[u]) for u, b in g.adjacency[i])
            new.append(_digest((labels[i], tuple(nbrs))))
        if len(set(new)) == len(set(labels)):
            labels = new
            break
        labels = new
    bond_labels = sorted(
        tuple(sorted((labels[b.a], labels[b.b]))) + (b.order,) for b in g.bonds)
    return (n, g.num_bonds, tuple(sorted(labels)), tuple(bond_labels))


def is_isomorphic(a: MolGraph | str, b: MolGraph | str) -> bool:
    ga = parse(a) if isinstance(a, str) else a
    gb = parse(b) if isinstance(b, str) else b
    if ga.num_atoms != gb.num_atoms or ga.num_bonds != gb.num_bonds:
        return False
    return graph_signature(ga) == graph_signature(gb)


def iter_double_bonds(g: MolGraph) -> Iterable[int]:
    for bi, bond in enumerate(g.bonds):
        if bond.order == "double":
            yield bi
