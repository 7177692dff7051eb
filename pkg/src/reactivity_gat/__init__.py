"""Graph-attention prediction of copolymerization reactivity ratios."""

__version__ = "0.1.0"

from .data import generate_copolymer, ingest_csv
from .estimator import CopolymerGraphFeaturizer, ReactivityRatioRegressor, SqrtRobustScaler
from .featurize import featurize_graph, featurize_smiles
from .model import ModelConfig, load_model, mimo_forward, save_model
from .smiles import SmilesError, is_isomorphic, parse, write_smiles
from .training import TrainConfig, evaluate, train

__all__ = [
    "__version__",
    "CopolymerGraphFeaturizer",
    "ModelConfig",
    "ReactivityRatioRegressor",
    "SmilesError",
    "SqrtRobustScaler",
    "TrainConfig",
    "evaluate",
    "featurize_graph",
    "featurize_smiles",
    "generate_copolymer",
    "ingest_csv",
    "is_isomorphic",
    "load_model",
    "mimo_forward",
    "parse",
    "save_model",
    "train",
    "write_smiles",
]
