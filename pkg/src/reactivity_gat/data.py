"""Dataset ingestion, copolymer generation, target transforms and splitting."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Generic, Iterable, Sequence, TypeVar

import numpy as np
from sklearn.preprocessing import RobustScaler

from .autodiff import make_rng
from .featurize import FeaturizedGraph, featurize_graph
from .smiles import (AtomNode, BondEdge, MolGraph, SmilesError, _assemble, implicit_h_count,
                     is_isomorphic, parse, perceive_rings, write_smiles)

__all__ = [
    "CSV_COLUMNS",
    "DataError",
    "NonVinylMonomerError",
    "RawRecord",
    "Rejection",
    "ScalerParams",
    "Sample",
    "DatasetSplit",
    "ingest_csv",
    "clean_rows",
    "generate_copolymer",
    "select_vinyl",
    "sqrt_transform",
    "invert_sqrt",
    "fit_scaler",
    "apply_scaler",
    "invert_scaler",
    "skewness",
    "shuffle_split",
    "prepare_samples",
    "targets",
    "fisher_yates",
    "read_records",
    "write_records",
    "write_rejections",
    "write_split_manifest",
    "file_digest",
]

CSV_COLUMNS = ("monomer1_smiles", "monomer2_smiles", "copolymer_smiles", "r1", "r2")
SPLIT_MANIFEST_VERSION = 1


class DataError(ValueError):
    """Unusable input data (bad file, header, or too few records)."""


class NonVinylMonomerError(DataError):
    pass


@dataclass(frozen=True)
class RawRecord:
    row_id: int
    monomer1_smiles: str
    monomer2_smiles: str
    copolymer_smiles: str
    r1: float
    r2: float


@dataclass(frozen=True)
class Rejection:
    row_id: int
    reason: str
    row: dict


# ------------------------------------------------------------ copolymers


def _pi_neighbors(g: MolGraph, atom: int, exclude_bond: int) -> int:
    count = 0
    for nbr, bi in g.adjacency[atom]:
        if bi == exclude_bond:
            continue
        if any(g.bonds[b].order != "single" for _, b in g.adjacency[nbr]) or g.atoms[nbr].is_aromatic:
            count += 1
    return count


def select_vinyl(g: MolGraph) -> tuple[int, int, int]:
    """Pick the polymerizable C=C and orient it.

    Returns ``(bond index, head atom, tail atom)``. A terminal CH2= bond is
    preferred; otherwise the first non-aromatic C=C. The head is the CH2 end
    (more hydrogens; on a tie, the end with fewer pi-substituents, then the
    lower index). Raises :class:`NonVinylMonomerError` if none exists.
    """
    candidates = []
    for bi, bond in enumerate(g.bonds):
        if bond.order != "double":
            continue
        a, b = g.atoms[bond.a], g.atoms[bond.b]
        if a.element != "C" or b.element != "C" or a.is_aromatic or b.is_aromatic:
            continue
        candidates.append(bi)
    if not candidates:
        raise NonVinylMonomerError("non-vinyl monomer: no polymerizable C=C found")

    terminal = [bi for bi in candidates
                if 2 in (implicit_h_count(g, g.bonds[bi].a), implicit_h_count(g, g.bonds[bi].b))]
    bi = (terminal or candidates)[0]
    bond = g.bonds[bi]

    def head_key(atom: int):
        return (-implicit_h_count(g, atom), _pi_neighbors(g, atom, bi), atom)

    head, tail = sorted((bond.a, bond.b), key=head_key)
    return bi, head, tail


def _with_extra_bond(atom: AtomNode) -> AtomNode:
    if atom.explicit_h:
        return replace(atom, explicit_h=atom.explicit_h - 1, chirality="")
    return replace(atom, chirality="")


def build_copolymer_graph(m1: MolGraph, m2: MolGraph) -> MolGraph:
    """Head-to-tail dimer: CH3-[m1 head..tail]-[m2 head..tail]-CH3."""
    v1, head1, tail1 = select_vinyl(m1)
    v2, head2, tail2 = select_vinyl(m2)
    n1 = m1.num_atoms
    touched = {head1, tail1, head2 + n1, tail2 + n1}

    atoms: list[AtomNode] = []
    for i, a in enumerate(list(m1.atoms) + list(m2.atoms)):
        a = replace(a, index=i, in_ring=False)
        atoms.append(_with_extra_bond(a) if i in touched else a)
    bonds: list[BondEdge] = []
    for offset, mol, vinyl in ((0, m1, v1), (n1, m2, v2)):
        for bi, b in enumerate(mol.bonds):
            order = "single" if bi == vinyl else b.order
            stereo = "none" if bi == vinyl else b.stereo
            bonds.append(BondEdge(b.a + offset, b.b + offset, order, stereo))

    cap1 = len(atoms)
    atoms.append(AtomNode("C", index=cap1))
    cap2 = len(atoms)
    atoms.append(AtomNode("C", index=cap2))
    bonds.append(BondEdge(cap1, head1))
    bonds.append(BondEdge(tail1, head2 + n1))
    bonds.append(BondEdge(tail2 + n1, cap2))
    # directional markers lose meaning once the vinyl bonds are saturated
    bonds = [replace(b, stereo="none") for b in bonds]
    return perceive_rings(_assemble(atoms, bonds))


def generate_copolymer(m1: MolGraph | str, m2: MolGraph | str) -> str:
    """SMILES of the single-unit head-to-tail copolymer of two vinyl monomers."""
    g1 = parse(m1) if isinstance(m1, str) else m1
    g2 = parse(m2) if isinstance(m2, str) else m2
    graph = build_copolymer_graph(g1, g2)
    smiles = write_smiles(graph, start=graph.num_atoms - 2)  # head-side methyl cap
    parse(smiles)  # the emitted string must round-trip
    return smiles


# ------------------------------------------------------------- ingestion


def _parse_target(text: str | None) -> tuple[float | None, str | None]:
    if text is None or not text.strip():
        return None, "missing target"
    try:
        value = float(text)
    except ValueError:
        return None, f"invalid target {text!r}"
    if not math.isfinite(value):
        return None, "non-finite target"
    if value < 0:
        return None, "negative target"
    return value, None


def clean_rows(rows: Iterable[tuple[int, dict]]) -> tuple[list[RawRecord], list[Rejection]]:
    """Apply the cleaning rules to ``(row_id, row dict)`` pairs.

    Rows are rejected for missing/invalid/negative targets, unparsable
    structures, monomers without a polymerizable C=C, or a supplied
    copolymer that is not the head-to-tail dimer of its monomers.
    Records with an empty copolymer get a generated one.
    """
    records, rejected = [], []
    for row_id, row in rows:
        r1, err1 = _parse_target(row.get("r1"))
        r2, err2 = _parse_target(row.get("r2"))
        if err1 or err2:
            rejected.append(Rejection(row_id, err1 or err2, dict(row)))
            continue
        m1s = (row.get("monomer1_smiles") or "").strip()
        m2s = (row.get("monomer2_smiles") or "").strip()
        cos = (row.get("copolymer_smiles") or "").strip()
        try:
            g1, g2 = parse(m1s), parse(m2s)
            gco = parse(cos) if cos else None
        except SmilesError as exc:
            rejected.append(Rejection(row_id, f"unparsable structure: {exc}", dict(row)))
            continue
        try:
            generated = generate_copolymer(g1, g2)
        except NonVinylMonomerError as exc:
            rejected.append(Rejection(row_id, str(exc), dict(row)))
            continue
        if gco is not None and not is_isomorphic(gco, parse(generated)):
            rejected.append(Rejection(
                row_id, "copolymer inconsistent with monomers (not the head-to-tail dimer)", dict(row)))
            continue
        records.append(RawRecord(row_id, m1s, m2s, cos or generated, r1, r2))
    return records, rejected


def ingest_csv(path: str | Path) -> tuple[list[RawRecord], list[Rejection]]:
    """Read and clean a reactivity-ratio CSV; row ids are 1-based data rows."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError("no records: empty file")
        header = [c.strip() for c in reader.fieldnames]
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise DataError(f"malformed header: missing columns {missing}")
        reader.fieldnames = header
        rows = [(i, row) for i, row in enumerate(reader, start=1)]
    if not rows:
        raise DataError("no records")
    return clean_rows(rows)


def records_to_rows(records: Iterable[RawRecord]) -> list[tuple[int, dict]]:
    return [(r.row_id, {"monomer1_smiles": r.monomer1_smiles, "monomer2_smiles": r.monomer2_smiles,
                        "copolymer_smiles": r.copolymer_smiles, "r1": repr(r.r1), "r2": repr(r.r2)})
            for r in records]


def write_records(path: str | Path, records: Iterable[RawRecord]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("row_id",) + CSV_COLUMNS)
        for r in records:
            w.writerow((r.row_id, r.monomer1_smiles, r.monomer2_smiles, r.copolymer_smiles,
                        repr(r.r1), repr(r.r2)))


def read_records(path: str | Path) -> list[RawRecord]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [RawRecord(int(row["row_id"]), row["monomer1_smiles"], row["monomer2_smiles"],
                          row["copolymer_smiles"], float(row["r1"]), float(row["r2"]))
                for row in csv.DictReader(fh)]


def write_rejections(path: str | Path, rejected: Iterable[Rejection]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("row_id",) + CSV_COLUMNS + ("reason",))
        for r in rejected:
            w.writerow((r.row_id,) + tuple(r.row.get(c, "") for c in CSV_COLUMNS) + (r.reason,))


# ------------------------------------------------------------ transforms


def sqrt_transform(r):
    arr = np.asarray(r, dtype=np.float64)
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError("square-root transform needs finite non-negative values")
    out = np.sqrt(arr)
    return float(out) if out.ndim == 0 else out


def invert_sqrt(y):
    """Inverse of :func:`sqrt_transform`; negative inputs clamp to 0 first."""
    arr = np.maximum(np.asarray(y, dtype=np.float64), 0.0)
    out = arr * arr
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ScalerParams:
    center: tuple[float, ...]
    scale: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"center": list(self.center), "scale": list(self.scale), "quantile_range": [5.0, 95.0]}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerParams":
        return cls(tuple(float(v) for v in d["center"]), tuple(float(v) for v in d["scale"]))


def fit_scaler(y, quantile_range: tuple[float, float] = (5.0, 95.0)) -> ScalerParams:
    """Median / inter-quantile scaling fitted per target column."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    for j in range(y.shape[1]):
        if np.unique(y[:, j]).size < 2:
            raise ValueError(f"degenerate target column {j}: fewer than 2 distinct values")
    lo, hi = np.percentile(y, quantile_range, axis=0)
    if np.any(hi == lo):
        raise ValueError("degenerate scaler: upper and lower quantiles coincide")
    rs = RobustScaler(quantile_range=quantile_range).fit(y)
    return ScalerParams(tuple(map(float, rs.center_)), tuple(map(float, rs.scale_)))


def apply_scaler(params: ScalerParams, y):
    return (np.asarray(y, dtype=np.float64) - np.asarray(params.center)) / np.asarray(params.scale)


def invert_scaler(params: ScalerParams, y):
    return np.asarray(y, dtype=np.float64) * np.asarray(params.scale) + np.asarray(params.center)


def skewness(values) -> float:
    """Fisher-Pearson moment coefficient with population moments."""
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size < 3:
        raise ValueError("skewness needs at least 3 values")
    d = x - x.mean()
    m2 = np.mean(d * d)
    if m2 == 0:
        raise ValueError("skewness undefined for zero variance")
    return float(np.mean(d ** 3) / m2 ** 1.5)


# ---------------------------------------------------------------- splits

T = TypeVar("T")


@dataclass
class DatasetSplit(Generic[T]):
    train: list
    validation: list
    test: list
    seed: int

    def row_ids(self) -> dict[str, list[int]]:
        return {name: [item.row_id for item in getattr(self, name)]
                for name in ("train", "validation", "test")}


def fisher_yates(n: int, seed: int) -> list[int]:
    rng = make_rng(seed, 1)
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        order[i], order[j] = order[j], order[i]
    return order


def shuffle_split(records: Sequence[T], seed: int,
                  ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)) -> DatasetSplit:
    """Seeded shuffle then contiguous slicing; floor train/val, rest to test."""
    n = len(records)
    if n < 10:
        raise DataError(f"too few records to split ({n} < 10)")
    if abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError("split ratios must be non-negative and sum to 1")
    order = fisher_yates(n, seed)
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_val = math.floor(ratios[1] * n + 1e-9)
    items = [records[i] for i in order]
    return DatasetSplit(items[:n_train], items[n_train:n_train + n_val], items[n_train + n_val:], seed)


def targets(records: Sequence[RawRecord]) -> np.ndarray:
    return np.array([[r.r1, r.r2] for r in records], dtype=np.float64)


@dataclass(frozen=True)
class Sample:
    row_id: int
    graphs: tuple[FeaturizedGraph, FeaturizedGraph, FeaturizedGraph]
    target: np.ndarray  # transformed + scaled (2,)
    original: np.ndarray = field(default_factory=lambda: np.zeros(2))  # raw r1, r2


def prepare_samples(records: Sequence[RawRecord], scaler: ScalerParams) -> list[Sample]:
    out = []
    for r in records:
        graphs = tuple(featurize_graph(parse(s)) for s in
                       (r.monomer1_smiles, r.monomer2_smiles, r.copolymer_smiles))
        y = apply_scaler(scaler, sqrt_transform(np.array([r.r1, r.r2])))
        out.append(Sample(r.row_id, graphs, y, np.array([r.r1, r.r2])))
    return out


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_split_manifest(path: str | Path, split: DatasetSplit, input_digest: str,
                         mode: str = "shuffle") -> None:
    manifest = {
        "version": SPLIT_MANIFEST_VERSION,
        "seed": split.seed,
        "mode": mode,
        "input_sha256": input_digest,
        "row_ids": split.row_ids(),
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
