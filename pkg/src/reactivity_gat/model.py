"""Multi-input / multi-output graph attention network.

One shared attentive encoder embeds monomer 1, monomer 2 and the copolymer;
the three embeddings are concatenated and passed through a fusion layer and
a 2-unit output layer (r1, r2 in transformed space).

Encoder, per molecule:

* ``h0 = leaky_relu(x W_in + b)``; layer-0 neighbor messages also see the
  bond: ``n_vu = leaky_relu([h0_u, bond_vu] W_nb + b)``.
* For each of ``radius`` layers: alignment ``e_vu = leaky_relu([h_v, h_u] w)``,
  attention ``a_vu = softmax_u(e_vu)``, context
  ``C_v = elu(sum_u a_vu (h_u W + b))`` and a GRU update of ``h_v``.
  Every atom also attends to itself, so no neighborhood is empty.
* Readout: a super node ``s0 = sum_v h_v`` attends over all atoms for
  ``T`` steps, updated by its own GRU.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import ParamStore, Tensor
from .featurize import ATOM_DIM, BOND_DIM, FeaturizedGraph

__all__ = [
    "ModelConfig",
    "GraphBatch",
    "EncoderState",
    "build_batch",
    "init_params",
    "encode",
    "init_atom_states",
    "align",
    "attend",
    "context",
    "gru_cell",
    "readout",
    "mimo_forward",
    "mimo_forward_batch",
    "extract_atom_embeddings",
    "save_model",
    "load_model",
]


@dataclass
class ModelConfig:
    fingerprint_dim: int = 300
    radius: int = 3
    T: int = 3
    dropout: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if int(self.fingerprint_dim) <= 0:
            raise ValueError("fingerprint_dim must be positive")
        if int(self.radius) < 1:
            raise ValueError("radius must be >= 1")
        if int(self.T) < 1:
            raise ValueError("T must be >= 1")
        if not 0.0 <= float(self.dropout) < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(atom_dim=ATOM_DIM, bond_dim=BOND_DIM,
                 leaky_slope=ad.LEAKY_SLOPE, elu_alpha=ad.ELU_ALPHA)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        if d.get("atom_dim", ATOM_DIM) != ATOM_DIM or d.get("bond_dim", BOND_DIM) != BOND_DIM:
            raise checkpoint.CheckpointError(
                f"feature width mismatch: checkpoint has atom_dim={d.get('atom_dim')}, "
                f"bond_dim={d.get('bond_dim')}; expected {ATOM_DIM}/{BOND_DIM}")
        return cls(**{k: d[k] for k in ("fingerprint_dim", "radius", "T", "dropout", "seed")})


# ------------------------------------------------------------------ batching


@dataclass
class GraphBatch:
    """Disjoint union of molecules with self-edges added.

    ``center``/``neighbor`` index atoms of the whole batch; ``mol_ids`` maps
    each atom to its molecule so readout never mixes molecules.
    """

    x: np.ndarray
    center: np.ndarray
    neighbor: np.ndarray
    edge_features: np.ndarray
    mol_ids: np.ndarray
    num_atoms: int
    num_mols: int
    atom_offsets: np.ndarray


def build_batch(graphs: Sequence[FeaturizedGraph]) -> GraphBatch:
    xs, centers, nbrs, feats, mols = [], [], [], [], []
    offset = 0
    offsets = [0]
    for m, fg in enumerate(graphs):
        n = fg.num_atoms
        if n == 0:
            raise ValueError("empty molecular graph")
        self_idx = np.arange(n)
        c = np.concatenate([fg.edge_index[:, 0], self_idx])
        u = np.concatenate([fg.edge_index[:, 1], self_idx])
        f = np.concatenate([fg.edge_features, np.zeros((n, BOND_DIM))])
        order = np.lexsort((u, c))
        xs.append(fg.atom_features)
        centers.append(c[order] + offset)
        nbrs.append(u[order] + offset)
        feats.append(f[order])
        mols.append(np.full(n, m, dtype=np.int64))
        offset += n
        offsets.append(offset)
    return GraphBatch(
        x=np.concatenate(xs), center=np.concatenate(centers), neighbor=np.concatenate(nbrs),
        edge_features=np.concatenate(feats), mol_ids=np.concatenate(mols),
        num_atoms=offset, num_mols=len(graphs), atom_offsets=np.asarray(offsets),
    )


# ------------------------------------------------------------- parameters


def _param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    H = int(cfg.fingerprint_dim)
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("encoder.atom_in.weight", (ATOM_DIM, H)),
        ("encoder.atom_in.bias", (H,)),
        ("encoder.neighbor_in.weight", (H + BOND_DIM, H)),
        ("encoder.neighbor_in.bias", (H,)),
    ]

    def block(prefix: str):
        shapes.extend([
            (f"{prefix}.align.weight", (2 * H, 1)),
            (f"{prefix}.align.bias", (1,)),
            (f"{prefix}.attend.weight", (H, H)),
            (f"{prefix}.attend.bias", (H,)),
        ])
        for gate in ("update", "reset", "candidate"):
            shapes.append((f"{prefix}.gru.{gate}.weight", (2 * H, H)))
            shapes.append((f"{prefix}.gru.{gate}.bias", (H,)))

    for k in range(int(cfg.radius)):
        block(f"encoder.layer{k}")
    block("encoder.readout")
    shapes += [
        ("head.fusion.weight", (3 * H, H)),
        ("head.fusion.bias", (H,)),
        ("head.output.weight", (H, 2)),
        ("head.output.bias", (2,)),
    ]
    return shapes


def init_params(cfg: ModelConfig) -> ParamStore:
    """Glorot-uniform weights, zero biases, seeded by ``cfg.seed``."""
    rng = ad.make_rng(cfg.seed, 0)
    params = ParamStore()
    for name, shape in _param_shapes(cfg):
        if len(shape) == 2:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            params.add(name, rng.uniform(-limit, limit, size=shape))
        else:
            params.add(name, np.zeros(shape))
    return params


# ---------------------------------------------------------------- encoder


@dataclass
class EncoderState:
    """Intermediate quantities recorded during one encoder pass (numpy)."""

    atom_states: list[np.ndarray] = field(default_factory=list)  # h^0 .. h^K
    alignment: list[np.ndarray] = field(default_factory=list)  # per layer, per edge
    attention: list[np.ndarray] = field(default_factory=list)
    contexts: list[np.ndarray] = field(default_factory=list)
    super_states: list[np.ndarray] = field(default_factory=list)  # s^0 .. s^T
    readout_attention: list[np.ndarray] = field(default_factory=list)
    center: np.ndarray | None = None
    neighbor: np.ndarray | None = None
    mol_ids: np.ndarray | None = None
    embedding: np.ndarray | None = None


def _linear(x: Tensor, params: ParamStore, prefix: str) -> Tensor:
    return ad.add(ad.matmul(x, params[f"{prefix}.weight"]), params[f"{prefix}.bias"])


def init_atom_states(x, params: ParamStore) -> Tensor:
    """Layer-0 lift of raw atom features into the hidden width."""
    return ad.leaky_relu(_linear(ad.tensor(x) if not isinstance(x, Tensor) else x,
                                 params, "encoder.atom_in"))


def align(target: Tensor, source: Tensor, params: ParamStore, prefix: str) -> Tensor:
    """Scalar alignment score per (target, source) row pair, shape (E,)."""
    scores = ad.leaky_relu(_linear(ad.concat([target, source], axis=1), params, f"{prefix}.align"))
    return ad.reshape(scores, (scores.shape[0],))


def attend(scores: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    return ad.segment_softmax(scores, segment_ids, num_segments)


def context(weights: Tensor, messages: Tensor, segment_ids: np.ndarray,
            num_segments: int) -> Tensor:
    """``elu`` of the attention-weighted message sum per segment.

    ``messages`` are already transformed (``h_u W + b``).
    """
    weighted = ad.mul(messages, ad.reshape(weights, (weights.shape[0], 1)))
    return ad.elu(ad.segment_sum(weighted, segment_ids, num_segments))


def gru_cell(c: Tensor, h: Tensor, params: ParamStore, prefix: str) -> Tensor:
    ch = ad.concat([c, h], axis=1)
    z = ad.sigmoid(_linear(ch, params, f"{prefix}.gru.update"))
    r = ad.sigmoid(_linear(ch, params, f"{prefix}.gru.reset"))
    cand = ad.tanh(_linear(ad.concat([c, ad.mul(r, h)], axis=1), params, f"{prefix}.gru.candidate"))
    return ad.add(ad.mul(ad.sub(1.0, z), h), ad.mul(z, cand))


def _encode_atoms(batch: GraphBatch, params: ParamStore, cfg: ModelConfig, train: bool,
                  rng, state: EncoderState | None) -> Tensor:
    N = batch.num_atoms
    center, nbr = batch.center, batch.neighbor
    h = init_atom_states(batch.x, params)
    nb0 = ad.leaky_relu(_linear(
        ad.concat([ad.gather(h, nbr), ad.tensor(batch.edge_features)], axis=1),
        params, "encoder.neighbor_in"))
    if state is not None:
        state.atom_states.append(h.data.copy())
    for k in range(int(cfg.radius)):
        prefix = f"encoder.layer{k}"
        hv = ad.gather(h, center)
        if k == 0:
            hu = nb0
            msgs = _linear(nb0, params, f"{prefix}.attend")
        else:
            hu = ad.gather(h, nbr)
            msgs = ad.gather(_linear(h, params, f"{prefix}.attend"), nbr)
        e = align(hv, hu, params, prefix)
        a = attend(e, center, N)
        c = context(a, msgs, center, N)
        if state is not None:
            state.alignment.append(e.data.copy())
            state.attention.append(a.data.copy())
            state.contexts.append(c.data.copy())
        c = ad.dropout(c, float(cfg.dropout), train, rng)
        h = gru_cell(c, h, params, prefix)
        if state is not None:
            state.atom_states.append(h.data.copy())
    return h


def readout(h: Tensor, mol_ids: np.ndarray, num_mols: int, params: ParamStore,
            cfg: ModelConfig, state: EncoderState | None = None) -> Tensor:
    """Super-node attention over each molecule's atoms for ``T`` steps."""
    prefix = "encoder.readout"
    s = ad.segment_sum(h, mol_ids, num_mols)
    msgs = _linear(h, params, f"{prefix}.attend")
    if state is not None:
        state.super_states.append(s.data.copy())
    for _ in range(int(cfg.T)):
        e = align(ad.gather(s, mol_ids), h, params, prefix)
        a = attend(e, mol_ids, num_mols)
        c = context(a, msgs, mol_ids, num_mols)
        s = gru_cell(c, s, params, prefix)
        if state is not None:
            state.readout_attention.append(a.data.copy())
            state.super_states.append(s.data.copy())
    return s


def encode(batch: GraphBatch, params: ParamStore, cfg: ModelConfig, train: bool = False,
           rng=None, record: bool = False) -> tuple[Tensor, Tensor, EncoderState | None]:
    """Return (final atom states, molecule embeddings, optional record)."""
    state = EncoderState() if record else None
    h = _encode_atoms(batch, params, cfg, train, rng, state)
    s = readout(h, batch.mol_ids, batch.num_mols, params, cfg, state)
    if state is not None:
        state.center, state.neighbor, state.mol_ids = batch.center, batch.neighbor, batch.mol_ids
        state.embedding = s.data.copy()
    return h, s, state


# ------------------------------------------------------------------- head


def mimo_forward_batch(triples: Sequence[Sequence[FeaturizedGraph]], params: ParamStore,
                       cfg: ModelConfig, train: bool = False, rng=None) -> Tensor:
    """Predict a (B, 2) tensor for B (monomer1, monomer2, copolymer) triples."""
    B = len(triples)
    if B == 0:
        raise ValueError("empty batch")
    for t in triples:
        if len(t) != 3:
            raise ValueError("each sample needs exactly three graphs")
    graphs = [t[j] for j in range(3) for t in triples]  # role-major ordering
    batch = build_batch(graphs)
    _, s, _ = encode(batch, params, cfg, train, rng)
    fused = ad.concat([ad.gather(s, np.arange(j * B, (j + 1) * B)) for j in range(3)], axis=1)
    fused = ad.dropout(fused, float(cfg.dropout), train, rng)
    hidden = ad.leaky_relu(_linear(fused, params, "head.fusion"))
    return _linear(hidden, params, "head.output")


def mimo_forward(g1: FeaturizedGraph, g2: FeaturizedGraph, gco: FeaturizedGraph,
                 params: ParamStore, cfg: ModelConfig) -> np.ndarray:
    """Inference on one triple; returns transformed-space (y1, y2)."""
    return mimo_forward_batch([(g1, g2, gco)], params, cfg).data[0].copy()


def extract_atom_embeddings(fg: FeaturizedGraph, params: ParamStore, cfg: ModelConfig) -> np.ndarray:
    h, _, _ = encode(build_batch([fg]), params, cfg)
    return h.data.copy()


# ------------------------------------------------------------- persistence


def save_model(path: str | Path, params: ParamStore, cfg: ModelConfig, extra: dict | None = None) -> None:
    meta = {"kind": "reactivity_gat.model", "model": cfg.to_dict(), "extra": extra or {}}
    checkpoint.save(path, meta, params.state_dict())


def load_model(path: str | Path) -> tuple[ParamStore, ModelConfig, dict]:
    meta, tensors = checkpoint.load(path)
    if meta.get("kind") != "reactivity_gat.model":
        raise checkpoint.CheckpointError("checkpoint does not hold a reactivity_gat model")
    cfg = ModelConfig.from_dict(meta["model"])
    expected = dict(_param_shapes(cfg))
    if set(expected) != set(tensors):
        raise checkpoint.CheckpointError("checkpoint tensors do not match the model config")
    for name, arr in tensors.items():
        if tuple(arr.shape) != expected[name]:
            raise checkpoint.CheckpointError(
                f"tensor {name} has shape {arr.shape}, config expects {expected[name]}")
    params = ParamStore((name, tensors[name]) for name, _ in _param_shapes(cfg))
    return params, cfg, meta.get("extra", {})
