"""scikit-learn style wrappers around the featurizer, target transform and model.

>>> reg = ReactivityRatioRegressor(fingerprint_dim=16, epochs=5)
>>> reg.fit([("C=CC#N", "C=Cc1ccccc1")] * 4, [[0.1, 0.4]] * 2 + [[0.2, 0.3]] * 2)  # doctest: +SKIP
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import (DataError, Sample, ScalerParams, apply_scaler, fit_scaler, generate_copolymer,
                   invert_scaler, invert_sqrt, sqrt_transform)
from .featurize import featurize_graph
from .model import ModelConfig, init_params, load_model, save_model
from .smiles import is_isomorphic, parse
from .training import TrainConfig, predict_transformed, train
from .validation import check_consistent_length, check_smiles_rows, check_targets

__all__ = ["SqrtRobustScaler", "CopolymerGraphFeaturizer", "ReactivityRatioRegressor"]


class SqrtRobustScaler(TransformerMixin, BaseEstimator):
    """Square root, then per-column median / 5-95 quantile-range scaling."""

    def fit(self, y, _=None):
        self.params_ = fit_scaler(sqrt_transform(check_targets(y)))
        self.center_ = np.asarray(self.params_.center)
        self.scale_ = np.asarray(self.params_.scale)
        return self

    def transform(self, y):
        check_is_fitted(self, "params_")
        return apply_scaler(self.params_, sqrt_transform(check_targets(y)))

    def inverse_transform(self, y):
        check_is_fitted(self, "params_")
        return invert_sqrt(invert_scaler(self.params_, y))


class CopolymerGraphFeaturizer(TransformerMixin, BaseEstimator):
    """Map ``(m1, m2[, copolymer])`` SMILES rows to featurized graph triples.

    A missing copolymer is generated as the head-to-tail dimer; a supplied
    one must be isomorphic to it unless ``check_copolymer`` is False.
    """

    def __init__(self, check_copolymer: bool = True):
        self.check_copolymer = check_copolymer

    def fit(self, X, y=None):
        check_smiles_rows(X)
        return self

    def transform(self, X):
        out = []
        for m1s, m2s, cos in check_smiles_rows(X):
            g1, g2 = parse(m1s), parse(m2s)
            generated = parse(generate_copolymer(g1, g2))
            if cos:
                gco = parse(cos)
                if self.check_copolymer and not is_isomorphic(gco, generated):
                    raise DataError(f"copolymer {cos!r} is not the head-to-tail dimer of {m1s} + {m2s}")
            else:
                gco = generated
            out.append((featurize_graph(g1), featurize_graph(g2), featurize_graph(gco)))
        return out


class ReactivityRatioRegressor(RegressorMixin, BaseEstimator):
    """Graph-attention regressor predicting (r1, r2) from monomer SMILES pairs.

    ``predict`` returns ratios in the original scale (always >= 0).
    """

    def __init__(self, fingerprint_dim=300, radius=3, T=3, dropout=0.05, batch_size=250,
                 epochs=300, lr=5.4e-3, min_lr=1e-6, gamma=0.8, patience=13,
                 weight_decay=1e-4, stop_loss=None, seed=0):
        self.fingerprint_dim = fingerprint_dim
        self.radius = radius
        self.T = T
        self.dropout = dropout
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr = lr
        self.min_lr = min_lr
        self.gamma = gamma
        self.patience = patience
        self.weight_decay = weight_decay
        self.stop_loss = stop_loss
        self.seed = seed

    def _model_config(self) -> ModelConfig:
        return ModelConfig(fingerprint_dim=self.fingerprint_dim, radius=self.radius, T=self.T,
                           dropout=self.dropout, seed=self.seed)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, epochs=self.epochs, lr=self.lr,
                           min_lr=self.min_lr, gamma=self.gamma, patience=self.patience,
                           weight_decay=self.weight_decay, dropout=self.dropout, seed=self.seed,
                           stop_loss=self.stop_loss)

    def fit(self, X, y, eval_set=None):
        """Train on ``X``/``y``; ``eval_set=(X_val, y_val)`` drives LR decay and
        best-epoch selection (defaults to the training data)."""
        y = check_targets(y)
        feats = CopolymerGraphFeaturizer()
        triples = feats.transform(X)
        check_consistent_length(triples, y)
        self.scaler_ = SqrtRobustScaler().fit(y)
        train_samples = self._samples(triples, y)
        if eval_set is not None:
            Xv, yv = eval_set
            yv = check_targets(yv)
            vt = feats.transform(Xv)
            check_consistent_length(vt, yv)
            val_samples = self._samples(vt, yv)
        else:
            val_samples = train_samples
        self.config_ = self._model_config()
        params = init_params(self.config_)
        result = train(params, self.config_, train_samples, val_samples, self._train_config())
        params.load_state_dict(result.best_state)
        self.params_ = params
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        return self

    def _samples(self, triples, y):
        scaled = self.scaler_.transform(y)
        return [Sample(i, t, scaled[i], y[i]) for i, t in enumerate(triples)]

    def predict_transformed(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        triples = CopolymerGraphFeaturizer().transform(X)
        return predict_transformed(self.params_, self.config_, triples, int(self.batch_size))

    def predict(self, X) -> np.ndarray:
        transformed = self.predict_transformed(X)
        return self.scaler_.inverse_transform(transformed)

    def save(self, path: str | Path) -> None:
        check_is_fitted(self, "params_")
        extra = {"scaler": self.scaler_.params_.to_dict(), "estimator": self.get_params()}
        save_model(path, self.params_, self.config_, extra)

    @classmethod
    def load(cls, path: str | Path) -> "ReactivityRatioRegressor":
        params, cfg, extra = load_model(path)
        if "scaler" not in extra:
            raise DataError("checkpoint carries no target scaler")
        est = cls(**extra.get("estimator", {}))
        est.params_, est.config_ = params, cfg
        scaler = SqrtRobustScaler()
        scaler.params_ = ScalerParams.from_dict(extra["scaler"])
        scaler.center_, scaler.scale_ = np.asarray(scaler.params_.center), np.asarray(scaler.params_.scale)
        est.scaler_ = scaler
        return est
