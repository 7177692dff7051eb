"""Interpretability exports: atom similarity, attention dumps, feature ablation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autodiff import ParamStore
from .featurize import FEATURE_GROUPS, FeaturizedGraph
from .model import ModelConfig, build_batch, encode, extract_atom_embeddings, mimo_forward_batch

__all__ = [
    "SimilarityMatrix",
    "AttentionDump",
    "AblationResult",
    "pearson_matrix",
    "atom_similarity",
    "dump_attention",
    "ablate_groups",
    "feature_ablation_importance",
    "rank_feature_groups",
    "write_similarity",
    "write_attention",
    "write_importance",
]


@dataclass
class SimilarityMatrix:
    molecule: str
    values: np.ndarray
    labels: list[str]
    degenerate: list[int] = field(default_factory=list)
    trivial: bool = False


def pearson_matrix(emb: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Row-wise Pearson correlation.

    Rows with zero variance get 0 everywhere (diagonal included) and are
    returned in the second element.
    """
    emb = np.asarray(emb, dtype=np.float64)
    centered = emb - emb.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.sum(centered * centered, axis=1))
    scale = np.max(np.abs(emb), axis=1) if emb.size else np.zeros(len(emb))
    # variance indistinguishable from rounding noise counts as degenerate
    bad = norms <= 1e-12 * np.maximum(scale, 1.0) * np.sqrt(max(emb.shape[1], 1))
    unit = np.zeros_like(centered)
    ok = ~bad
    unit[ok] = centered[ok] / norms[ok, None]
    corr = unit @ unit.T
    corr = np.clip(0.5 * (corr + corr.T), -1.0, 1.0)
    idx = np.flatnonzero(ok)
    corr[idx, idx] = 1.0
    return corr, [int(i) for i in np.flatnonzero(bad)]


def atom_similarity(params: ParamStore, cfg: ModelConfig, fg: FeaturizedGraph) -> SimilarityMatrix:
    """Pearson similarity of final-layer atom embeddings across hidden units."""
    labels = list(fg.labels)
    if fg.num_atoms == 1:
        return SimilarityMatrix(fg.smiles, np.ones((1, 1)), labels, trivial=True)
    corr, bad = pearson_matrix(extract_atom_embeddings(fg, params, cfg))
    return SimilarityMatrix(fg.smiles, corr, labels, bad)


@dataclass
class AttentionDump:
    """Attention weights from one recorded forward pass.

    ``rows`` holds ``(layer, target, source, weight)``; atom layers are
    named ``layer0``.., readout steps ``readout0``.. with target ``-1``
    standing for the super node.
    """

    molecule: str
    rows: list[tuple[str, int, int, float]]

    def by_layer(self) -> dict[str, list[tuple[int, int, float]]]:
        out: dict[str, list[tuple[int, int, float]]] = {}
        for layer, t, s, w in self.rows:
            out.setdefault(layer, []).append((t, s, w))
        return out

    def target_sums(self) -> dict[str, dict[int, float]]:
        sums: dict[str, dict[int, float]] = {}
        for layer, t, _, w in self.rows:
            layer_sums = sums.setdefault(layer, {})
            layer_sums[t] = layer_sums.get(t, 0.0) + w
        return sums


def dump_attention(params: ParamStore, cfg: ModelConfig, fg: FeaturizedGraph) -> AttentionDump:
    cfg = replace(cfg, dropout=0.0)
    _, _, state = encode(build_batch([fg]), params, cfg, record=True)
    rows = []
    for k, a in enumerate(state.attention):
        rows.extend((f"layer{k}", int(t), int(s), float(w))
                    for t, s, w in zip(state.center, state.neighbor, a))
    for t, a in enumerate(state.readout_attention):
        rows.extend((f"readout{t}", -1, int(s), float(w)) for s, w in enumerate(a))
    return AttentionDump(fg.smiles, rows)


# --------------------------------------------------------------- ablation


def _mask_graph(fg: FeaturizedGraph, groups: Iterable[str]) -> FeaturizedGraph:
    atoms, edges = fg.atom_features.copy(), fg.edge_features.copy()
    for name in groups:
        g = FEATURE_GROUPS[name]
        if g.kind == "atom":
            atoms[:, g.columns] = 0.0
        else:
            edges[:, g.columns] = 0.0
    return replace(fg, atom_features=atoms, edge_features=edges)


def _check_groups(groups: Sequence[str]) -> list[str]:
    unknown = [g for g in groups if g not in FEATURE_GROUPS]
    if unknown:
        raise KeyError(f"unknown feature group(s): {', '.join(map(str, unknown))}")
    return list(groups)


def ablate_groups(params: ParamStore, cfg: ModelConfig, triples: Sequence, groups: Sequence[str],
                  batch_size: int = 250) -> np.ndarray:
    """Predictions (transformed space) with the given groups zeroed in every graph."""
    groups = _check_groups(groups)
    masked = [tuple(_mask_graph(g, groups) for g in t) for t in triples]
    return _predict(params, cfg, masked, batch_size)


def _predict(params, cfg, triples, batch_size):
    return np.concatenate([mimo_forward_batch(triples[i:i + batch_size], params, cfg).data
                           for i in range(0, len(triples), batch_size)])


@dataclass
class AblationResult:
    group: str
    mean_abs_delta: np.ndarray  # (2,)
    rank: int = 0


def feature_ablation_importance(params: ParamStore, cfg: ModelConfig, triples: Sequence,
                                group: str | Sequence[str], batch_size: int = 250) -> np.ndarray:
    """Mean absolute change of (y1, y2) when ``group`` is zeroed out.

    ``group`` may be a single name or several names ablated together.
    """
    if not triples:
        raise ValueError("no samples to ablate")
    groups = [group] if isinstance(group, str) else list(group)
    base = _predict(params, cfg, list(triples), batch_size)
    ablated = ablate_groups(params, cfg, list(triples), groups, batch_size)
    return np.mean(np.abs(ablated - base), axis=0)


def rank_feature_groups(params: ParamStore, cfg: ModelConfig, triples: Sequence,
                        groups: Sequence[str] | None = None, batch_size: int = 250) -> list[AblationResult]:
    """Ablate each group on its own and rank by mean |delta| over both outputs.

    Ties keep registry order, so the ranking is deterministic.
    """
    groups = _check_groups(list(FEATURE_GROUPS) if groups is None else list(groups))
    triples = list(triples)
    if not triples:
        raise ValueError("no samples to ablate")
    base = _predict(params, cfg, triples, batch_size)
    results = []
    for name in groups:
        delta = np.mean(np.abs(ablate_groups(params, cfg, triples, [name], batch_size) - base), axis=0)
        results.append(AblationResult(name, delta))
    order = sorted(range(len(results)), key=lambda i: (-float(results[i].mean_abs_delta.mean()), i))
    ranked = [results[i] for i in order]
    for r, res in enumerate(ranked, start=1):
        res.rank = r
    return ranked


# -------------------------------------------------------------------- I/O


def write_similarity(path: str | Path, sim: SimilarityMatrix) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["atom", *sim.labels])
        for label, row in zip(sim.labels, sim.values):
            w.writerow([label, *(f"{v:.6f}" for v in row)])


def write_attention(path: str | Path, dump: AttentionDump) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("layer", "target", "source", "weight"))
        for layer, t, s, weight in dump.rows:
            w.writerow((layer, t, s, repr(weight)))


def write_importance(path: str | Path, ranked: Sequence[AblationResult]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("group", "mean_abs_delta_r1", "mean_abs_delta_r2", "rank"))
        for res in ranked:
            w.writerow((res.group, repr(float(res.mean_abs_delta[0])),
                        repr(float(res.mean_abs_delta[1])), res.rank))
