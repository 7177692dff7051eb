"""End-to-end finite-difference check of the full model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .featurize import featurize_smiles
from .model import ModelConfig, init_params, mimo_forward_batch

__all__ = ["SMALL_MOLECULES", "ModelGradCheck", "random_small_triple", "model_grad_check"]

# molecules with at most six heavy atoms, mixing rings, aromaticity and heteroatoms
SMALL_MOLECULES = (
    "C", "CC", "C=C", "C=CC", "C=CC#N", "C=CCl", "C=CO", "CC(=O)O", "c1ccoc1", "C1CC1",
    "OCCN", "C=C(C)C", "c1ccsc1", "CC(F)(F)F", "N#CC#N", "C=CC(=O)O", "[NH4+]", "CS(C)=O",
)


@dataclass
class ModelGradCheck:
    max_rel_error: float
    checked: int
    skipped: int
    worst: str
    molecules: tuple[str, str, str]


def random_small_triple(seed: int) -> tuple[str, str, str]:
    rng = ad.make_rng(seed, 4)
    idx = rng.choice(len(SMALL_MOLECULES), size=3, replace=False)
    return tuple(SMALL_MOLECULES[i] for i in idx)


def model_grad_check(seed: int = 0, fingerprint_dim: int = 8, radius: int = 3, T: int = 3,
                     eps: float = 1e-4, max_coords: int | None = None) -> ModelGradCheck:
    """Check every parameter gradient of a randomly initialised model.

    The scalar objective is a fixed random projection of the two outputs of
    one random small-molecule triple, with dropout off.
    """
    smiles = random_small_triple(seed)
    triple = tuple(featurize_smiles(s) for s in smiles)
    cfg = ModelConfig(fingerprint_dim=fingerprint_dim, radius=radius, T=T, dropout=0.0, seed=seed)
    params = init_params(cfg)
    weights = ad.make_rng(seed, 5).normal(size=(1, 2))

    def objective(p):
        out = mimo_forward_batch([triple], p, cfg)
        return ad.mean(ad.mul(out, weights))

    rep = ad.grad_check_report(objective, params, eps=eps, max_coords=max_coords, seed=seed)
    return ModelGradCheck(rep.max_rel_error, rep.checked, rep.skipped, rep.worst, smiles)
