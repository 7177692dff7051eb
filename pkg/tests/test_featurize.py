import numpy as np
import pytest
from hypothesis import given, strategies as st

from molgen import molecules, permute_graph
from reactivity_gat.featurize import (ATOM_DIM, BOND_DIM, ELEMENTS, FEATURE_GROUPS, atom_features,
                                      bond_features, featurize_graph, featurize_smiles)
from reactivity_gat.smiles import parse

G = FEATURE_GROUPS


def slot(vec, group):
    cols = vec[G[group].columns]
    hot = np.flatnonzero(cols)
    assert len(hot) == 1
    return int(hot[0])


def flag(vec, group):
    return vec[G[group].start]


def test_layout_is_nine_atom_and_four_bond_groups():
    kinds = [g.kind for g in G.values()]
    assert kinds.count("atom") == 9 and kinds.count("bond") == 4
    assert ATOM_DIM == 33 and BOND_DIM == 7
    assert len(ELEMENTS) == 12
    for kind, dim in (("atom", ATOM_DIM), ("bond", BOND_DIM)):
        cols = sorted(c for g in G.values() if g.kind == kind for c in range(g.start, g.stop))
        assert cols == list(range(dim))


def test_lone_carbon():
    v = atom_features(parse("C"), 0)
    assert slot(v, "element") == ELEMENTS.index("C")
    assert slot(v, "degree") == 0
    assert slot(v, "hydrogens") == 4
    assert slot(v, "hybridization") == 2  # sp3


def test_benzene_carbon():
    v = atom_features(parse("c1ccccc1"), 0)
    assert flag(v, "aromatic") == 1 and flag(v, "atom_in_ring") == 1
    assert slot(v, "degree") == 2 and slot(v, "hydrogens") == 1
    assert slot(v, "hybridization") == 1  # sp2


def test_ester_oxygen():
    v = atom_features(parse("C=C(C)C(=O)OC"), 5)
    assert slot(v, "element") == ELEMENTS.index("O")
    assert slot(v, "degree") == 2 and slot(v, "hydrogens") == 0
    assert slot(v, "hybridization") == 2


def test_hybridization_sp_and_other():
    g = parse("CC#N")
    assert slot(atom_features(g, 1), "hybridization") == 0
    assert slot(atom_features(parse("C=C=C"), 1), "hybridization") == 0
    assert slot(atom_features(parse("[Na+]"), 0), "hybridization") == 3
    assert slot(atom_features(parse("[Na+]"), 0), "element") == len(ELEMENTS)


def test_charge_and_chirality():
    v = atom_features(parse("[NH4+]"), 0)
    assert flag(v, "formal_charge") == 1
    assert flag(atom_features(parse("N[C@H](C)O"), 1), "chirality") == 1
    assert flag(v, "radical") == 0


def test_hydrogen_slot_clamps_at_four():
    assert slot(atom_features(parse("[SiH4]"), 0), "hydrogens") == 4
    assert slot(atom_features(parse("[CH4]"), 0), "hydrogens") == 4


def test_ethylene_bond_not_conjugated():
    b = bond_features(parse("C=C"), 0)
    assert slot(b, "bond_order") == 1 and flag(b, "conjugated") == 0


def test_butadiene_central_bond_conjugated():
    b = bond_features(parse("C=CC=C"), 1)
    assert slot(b, "bond_order") == 0 and flag(b, "conjugated") == 1


def test_ester_bonds():
    g = parse("C=C(C)C(=O)OC")
    by_atoms = {frozenset((b.a, b.b)): i for i, b in enumerate(g.bonds)}
    assert flag(bond_features(g, by_atoms[frozenset((3, 5))]), "conjugated") == 1  # C(=O)-O
    assert flag(bond_features(g, by_atoms[frozenset((5, 6))]), "conjugated") == 0  # O-CH3


def test_aromatic_ring_and_stereo_bonds():
    g = parse("c1ccccc1")
    b = bond_features(g, 0)
    assert slot(b, "bond_order") == 3 and flag(b, "conjugated") == 1 and flag(b, "bond_in_ring") == 1
    s = parse("F/C=C/F")
    assert flag(bond_features(s, 0), "bond_stereo") == 1
    assert flag(bond_features(s, 1), "bond_stereo") == 0


@pytest.mark.parametrize("text,n,edges,seg", [
    ("C=C", 2, 2, [1, 1]),
    ("c1ccccc1", 6, 12, [2] * 6),
    ("C=Cc1ccncc1", 8, 16, None),
])
def test_featurize_graph_shapes(text, n, edges, seg):
    fg = featurize_smiles(text)
    assert fg.atom_features.shape == (n, ATOM_DIM)
    assert fg.edge_index.shape == (edges, 2) and fg.edge_features.shape == (edges, BOND_DIM)
    if seg is not None:
        assert np.diff(fg.segments).tolist() == seg
    assert np.array_equal(fg.atom_mask, np.ones(n))


@given(molecules)
def test_featurized_graph_invariants(g):
    fg = featurize_graph(g)
    assert fg.edge_index.shape[0] == 2 * g.num_bonds
    pairs = {tuple(e) for e in fg.edge_index.tolist()}
    assert all((u, v) in pairs for v, u in pairs)
    assert fg.segments[0] == 0 and fg.segments[-1] == len(fg.edge_index)
    for v in range(g.num_atoms):
        assert np.all(fg.edge_index[fg.segments[v]:fg.segments[v + 1], 0] == v)
    assert fg.edge_index.tolist() == sorted(fg.edge_index.tolist())
    for name, grp in G.items():
        mat = fg.atom_features if grp.kind == "atom" else fg.edge_features
        if grp.stop - grp.start > 1:
            assert np.all(mat[:, grp.columns].sum(axis=1) == 1), name
    binary = np.delete(fg.atom_features, G["formal_charge"].start, axis=1)
    assert set(np.unique(binary)) <= {0.0, 1.0}
    assert set(np.unique(fg.edge_features)) <= {0.0, 1.0}


@given(molecules, st.randoms(use_true_random=False))
def test_relabelling_permutes_rows(g, rnd):
    perm = list(range(g.num_atoms))
    rnd.shuffle(perm)
    a, b = featurize_graph(g), featurize_graph(permute_graph(g, perm))
    assert np.array_equal(b.atom_features[perm], a.atom_features)
    ea = sorted(tuple(r) for r in a.edge_features.tolist())
    eb = sorted(tuple(r) for r in b.edge_features.tolist())
    assert ea == eb
