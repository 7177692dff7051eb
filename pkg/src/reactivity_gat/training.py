"""Multi-task training loop, plateau LR schedule and regression metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, NumericalError, ParamStore, Tensor
from .data import Sample, ScalerParams, invert_scaler, invert_sqrt
from .model import ModelConfig, mimo_forward_batch

__all__ = [
    "TrainConfig",
    "EpochLog",
    "Metrics",
    "TrainResult",
    "PlateauScheduler",
    "multitask_loss",
    "reduce_lr_on_plateau",
    "train",
    "evaluate",
    "predict_transformed",
    "rmse",
    "r2_score",
    "write_training_log",
    "write_parity",
]

LOG_COLUMNS = ("epoch", "lr", "train_loss", "val_loss", "val_rmse1", "val_rmse2", "val_r2_1", "val_r2_2")


@dataclass
class TrainConfig:
    batch_size: int = 250
    epochs: int = 300
    lr: float = 5.4e-3
    min_lr: float = 1e-6
    gamma: float = 0.8
    patience: int = 13
    weight_decay: float = 1e-4
    dropout: float = 0.05
    seed: int = 0
    # stop once the eval-mode training loss drops below this value
    stop_loss: float | None = None

    def __post_init__(self):
        if int(self.batch_size) < 1 or int(self.epochs) < 1 or int(self.patience) < 1:
            raise ValueError("batch_size, epochs and patience must be positive")
        if self.lr < 0 or self.min_lr <= 0:
            raise ValueError("need lr >= 0 and min_lr > 0")
        # lr == 0 is allowed as a frozen run
        if self.lr and self.min_lr > self.lr:
            raise ValueError("min_lr must not exceed lr")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must be in (0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------- loss


def multitask_loss(pred: Tensor, target) -> tuple[Tensor, np.ndarray]:
    """Per-task MSE over the batch, averaged over the two tasks.

    Returns the combined scalar tensor and the per-task values.
    """
    target = np.asarray(target, dtype=np.float64)
    if pred.shape[0] == 0:
        raise ValueError("empty batch")
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match target {target.shape}")
    diff = ad.sub(pred, target)
    per_task = ad.mean(ad.mul(diff, diff), axis=0)
    return ad.mean(per_task), per_task.data.copy()


# -------------------------------------------------------------- scheduler


@dataclass
class PlateauScheduler:
    """Multiply the LR by ``gamma`` after ``patience`` epochs without improvement."""

    lr: float = 5.4e-3
    gamma: float = 0.8
    patience: int = 13
    min_lr: float = 1e-6
    threshold: float = 1e-8
    best: float = math.inf
    num_bad: int = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best - self.threshold:
            self.best = val_loss
            self.num_bad = 0
        else:
            self.num_bad += 1
            if self.num_bad >= self.patience:
                self.lr = min(self.lr, max(self.lr * self.gamma, self.min_lr))
                self.num_bad = 0
        return self.lr


def reduce_lr_on_plateau(state: PlateauScheduler, val_loss: float) -> float:
    return state.step(val_loss)


# ---------------------------------------------------------------- metrics


def rmse(pred, target) -> np.ndarray:
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    return np.sqrt(np.mean((pred - target) ** 2, axis=0))


def r2_score(pred, target) -> np.ndarray:
    """Per-column coefficient of determination; NaN where the target is constant."""
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    ss_res = np.sum((target - pred) ** 2, axis=0)
    ss_tot = np.sum((target - target.mean(axis=0)) ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 1.0 - ss_res / ss_tot
    return np.where(ss_tot > 0, out, np.nan)


@dataclass
class Metrics:
    loss: float
    rmse_transformed: np.ndarray
    r2_transformed: np.ndarray
    rmse_original: np.ndarray
    r2_original: np.ndarray
    parity: list[tuple[int, int, float, float]] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    loss_history: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        def clean(a):
            return [None if not np.isfinite(v) else float(v) for v in np.asarray(a)]
        return {
            "loss": self.loss,
            "rmse_transformed": clean(self.rmse_transformed),
            "r2_transformed": clean(self.r2_transformed),
            "rmse_original": clean(self.rmse_original),
            "r2_original": clean(self.r2_original),
            "flags": list(self.flags),
        }


def predict_transformed(params: ParamStore, cfg: ModelConfig, triples: Sequence, batch_size: int = 250) -> np.ndarray:
    """Eval-mode predictions in transformed space, shape (n, 2)."""
    out = [mimo_forward_batch(triples[i:i + batch_size], params, cfg).data
           for i in range(0, len(triples), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, 2))


def evaluate(params: ParamStore, cfg: ModelConfig, samples: Sequence[Sample], scaler: ScalerParams,
             batch_size: int = 250) -> Metrics:
    """Dropout-off metrics in transformed and original r space."""
    if not samples:
        raise ValueError("cannot evaluate an empty sample set")
    pred = predict_transformed(params, cfg, [s.graphs for s in samples], batch_size)
    target = np.stack([s.target for s in samples])
    pred_r = invert_sqrt(invert_scaler(scaler, pred))
    true_r = np.stack([s.original for s in samples])

    flags = []
    r2_t, r2_o = r2_score(pred, target), r2_score(pred_r, true_r)
    for j in range(2):
        if np.isnan(r2_t[j]) or np.isnan(r2_o[j]):
            flags.append(f"r2_undefined_task{j + 1}")
    parity = [(s.row_id, j + 1, float(true_r[i, j]), float(pred_r[i, j]))
              for i, s in enumerate(samples) for j in range(2)]
    loss = float(np.mean(np.mean((pred - target) ** 2, axis=0)))
    return Metrics(loss, rmse(pred, target), r2_t, rmse(pred_r, true_r), r2_o, parity, flags)


# ----------------------------------------------------------------- train


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    val_rmse: tuple[float, float]
    val_r2: tuple[float, float]


@dataclass
class TrainResult:
    best_state: dict
    best_epoch: int
    best_val_loss: float
    history: list[EpochLog]
    final_lr: float


def train(params: ParamStore, cfg: ModelConfig, train_samples: Sequence[Sample],
          val_samples: Sequence[Sample], config: TrainConfig,
          on_epoch: Callable[[EpochLog], None] | None = None) -> TrainResult:
    """Minibatch Adam on the two-task MSE with plateau LR decay.

    ``params`` is updated in place and ends at the final epoch; the best
    validation-loss snapshot is returned in the result.
    """
    if not train_samples:
        raise ValueError("empty training split")
    if not val_samples:
        raise ValueError("empty validation split")
    cfg = replace(cfg, dropout=config.dropout)
    adam = AdamState()
    sched = PlateauScheduler(lr=config.lr, gamma=config.gamma, patience=config.patience,
                             min_lr=config.min_lr)
    history: list[EpochLog] = []
    best_state, best_epoch, best_val = params.state_dict(), 0, math.inf
    n = len(train_samples)
    val_triples = [s.graphs for s in val_samples]
    val_target = np.stack([s.target for s in val_samples])

    for epoch in range(1, int(config.epochs) + 1):
        lr = sched.lr
        order = ad.make_rng(config.seed, 2, epoch).permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, int(config.batch_size))):
            idx = order[start:start + int(config.batch_size)]
            batch = [train_samples[i] for i in idx]
            drop_rng = ad.make_rng(config.seed, 3, epoch, b)
            pred = mimo_forward_batch([s.graphs for s in batch], params, cfg, train=True, rng=drop_rng)
            loss, _ = multitask_loss(pred, np.stack([s.target for s in batch]))
            if not math.isfinite(loss.item()):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}")
            params.zero_grad()
            ad.backward(loss)
            ad.adam_step(params, adam, lr, config.weight_decay)
            total += loss.item() * len(batch)
        train_loss = total / n

        val_pred = predict_transformed(params, cfg, val_triples, int(config.batch_size))
        per_task = np.mean((val_pred - val_target) ** 2, axis=0)
        val_loss = float(np.mean(per_task))
        if not math.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        r2 = r2_score(val_pred, val_target)
        entry = EpochLog(epoch, lr, train_loss, val_loss, tuple(np.sqrt(per_task)), tuple(r2))
        history.append(entry)
        if on_epoch is not None:
            on_epoch(entry)

        if val_loss < best_val:
            best_val, best_epoch, best_state = val_loss, epoch, params.state_dict()
        sched.step(val_loss)

        if config.stop_loss is not None:
            fit_pred = predict_transformed(params, cfg, [s.graphs for s in train_samples],
                                           int(config.batch_size))
            fit_loss = float(np.mean(np.mean(
                (fit_pred - np.stack([s.target for s in train_samples])) ** 2, axis=0)))
            if fit_loss < config.stop_loss:
                break

    return TrainResult(best_state, best_epoch, best_val, history, sched.lr)


# ------------------------------------------------------------------- I/O


def write_training_log(path: str | Path, history: Sequence[EpochLog]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for e in history:
            w.writerow([e.epoch, repr(e.lr), repr(e.train_loss), repr(e.val_loss),
                        repr(float(e.val_rmse[0])), repr(float(e.val_rmse[1])),
                        repr(float(e.val_r2[0])), repr(float(e.val_r2[1]))])


def write_parity(path: str | Path, metrics: Metrics) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("row_id", "task", "actual", "predicted"))
        for row_id, task, actual, predicted in metrics.parity:
            w.writerow((row_id, f"r{task}", repr(actual), repr(predicted)))
