import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from reactivity_gat import autodiff as ad
from reactivity_gat.data import RawRecord, ScalerParams, fit_scaler, generate_copolymer, prepare_samples, sqrt_transform
from reactivity_gat.model import ModelConfig, init_params
from reactivity_gat.training import (PlateauScheduler, TrainConfig, evaluate, multitask_loss,
                                     r2_score, reduce_lr_on_plateau, rmse, train, write_parity,
                                     write_training_log)

MONOMERS = ["C=Cc1ccccc1", "C=C(C)C(=O)OC", "C=CC(=O)OC", "C=CC#N", "C=COC(C)=O", "C=CC(=O)O",
            "C=Cc1ccncc1", "C=CCl", "C=C(Cl)Cl", "C=CC(N)=O", "C=C(C)C#N"]


def synthetic_records(n, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        a, b = rng.choice(len(MONOMERS), 2, replace=False)
        m1, m2 = MONOMERS[a], MONOMERS[b]
        out.append(RawRecord(i + 1, m1, m2, generate_copolymer(m1, m2),
                             float(rng.uniform(0.05, 3)), float(rng.uniform(0.05, 3))))
    return out


def synthetic_samples(n, seed=0):
    recs = synthetic_records(n, seed)
    sc = fit_scaler(sqrt_transform(np.array([[r.r1, r.r2] for r in recs])))
    return prepare_samples(recs, sc), sc


TINY = ModelConfig(fingerprint_dim=8, radius=2, T=2, dropout=0.0)


# -------------------------------------------------------------------- loss


def test_loss_zero_when_exact():
    y = np.array([[0.3, -1.2], [2.0, 0.1]])
    loss, per = multitask_loss(ad.tensor(y), y)
    assert loss.item() == 0.0 and per.tolist() == [0.0, 0.0]


def test_loss_unit_example():
    loss, per = multitask_loss(ad.tensor([[1.0, 1.0]]), np.zeros((1, 2)))
    assert per.tolist() == [1.0, 1.0] and loss.item() == 1.0


def test_loss_mixed_hand_computed():
    pred, target = np.array([[1.0, 2.0], [3.0, -1.0]]), np.array([[0.0, 0.5], [1.0, 1.0]])
    loss, per = multitask_loss(ad.tensor(pred), target)
    task1 = ((1 - 0) ** 2 + (3 - 1) ** 2) / 2
    task2 = ((2 - 0.5) ** 2 + (-1 - 1) ** 2) / 2
    assert per.tolist() == [task1, task2]
    assert loss.item() == pytest.approx((task1 + task2) / 2, abs=1e-15)


def test_loss_errors():
    with pytest.raises(ValueError):
        multitask_loss(ad.tensor(np.zeros((0, 2))), np.zeros((0, 2)))
    with pytest.raises(ValueError):
        multitask_loss(ad.tensor(np.zeros((2, 2))), np.zeros((3, 2)))


# --------------------------------------------------------------- scheduler


def test_scheduler_decays_after_patience():
    s = PlateauScheduler()
    s.step(1.0)
    for _ in range(12):
        assert s.step(1.0) == 5.4e-3
    assert s.step(1.0) == pytest.approx(4.32e-3, abs=1e-18)


def test_scheduler_improvement_resets_counter():
    s = PlateauScheduler()
    s.step(1.0)
    for _ in range(11):
        s.step(1.0)
    s.step(0.5)  # improvement on the 12th epoch
    for _ in range(12):
        assert s.step(0.5) == 5.4e-3
    assert s.step(0.5) < 5.4e-3


def test_scheduler_tiny_improvement_does_not_count():
    s = PlateauScheduler(patience=2)
    s.step(1.0)
    s.step(1.0 - 5e-9)
    assert reduce_lr_on_plateau(s, 1.0 - 9e-9) == pytest.approx(5.4e-3 * 0.8)


def test_scheduler_floors_exactly():
    s = PlateauScheduler()
    for _ in range(13 * 60):
        s.step(1.0)
    assert s.lr == 1e-6


@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=200), st.floats(1e-6, 1e-2))
def test_scheduler_monotone_and_bounded(losses, lr0):
    s = PlateauScheduler(lr=lr0)
    prev = s.lr
    for v in losses:
        lr = s.step(v)
        assert lr <= prev and lr >= min(1e-6, lr0)
        prev = lr


# ----------------------------------------------------------------- config


def test_train_config_defaults():
    c = TrainConfig()
    assert (c.batch_size, c.epochs, c.lr, c.min_lr, c.gamma, c.patience, c.weight_decay, c.dropout) == \
        (250, 300, 5.4e-3, 1e-6, 0.8, 13, 1e-4, 0.05)


@pytest.mark.parametrize("kw", [dict(batch_size=0), dict(epochs=0), dict(lr=-1), dict(min_lr=0),
                                dict(lr=1e-7), dict(gamma=1.0), dict(patience=0), dict(dropout=1.0),
                                dict(weight_decay=-1)])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


# ---------------------------------------------------------------- metrics


def test_metrics_definitions():
    t = np.array([[1.0, 2.0], [3.0, 5.0], [2.0, 8.0]])
    assert rmse(t, t).tolist() == [0.0, 0.0]
    assert r2_score(t, t).tolist() == [1.0, 1.0]
    assert np.allclose(r2_score(np.tile(t.mean(0), (3, 1)), t), 0.0, atol=1e-15)
    assert rmse(np.array([[3.0, 4.0], [3.0, 4.0]]), np.zeros((2, 2))).tolist() == [3.0, 4.0]
    assert math.sqrt(np.mean(rmse(np.array([[3.0, 4.0]] * 2), np.zeros((2, 2))) ** 2)) == pytest.approx(math.sqrt(12.5))
    assert np.isnan(r2_score(np.array([[1.0], [2.0]]), np.array([[3.0], [3.0]]))[0])


def test_evaluate_single_sample_parity():
    samples, sc = synthetic_samples(4)
    params = init_params(TINY)
    m = evaluate(params, TINY, samples[:1], sc)
    pred = np.array(m.parity)[:, 3].astype(float)
    assert len(m.parity) == 2 and m.parity[0][:2] == (1, 1)
    assert np.all(pred >= 0) and m.rmse_transformed.min() >= 0
    assert "r2_undefined_task1" in m.flags  # single sample: zero variance


def test_evaluate_reports_both_scales():
    samples, sc = synthetic_samples(6)
    m = evaluate(init_params(TINY), TINY, samples, sc)
    assert m.rmse_transformed.shape == (2,) and m.rmse_original.shape == (2,)
    assert np.all(m.r2_original <= 1) and np.all(m.r2_transformed <= 1)
    d = m.to_dict()
    assert set(d) >= {"loss", "rmse_transformed", "r2_transformed", "rmse_original", "r2_original"}


def test_evaluate_batch_size_invariance():
    samples, sc = synthetic_samples(9)
    params = init_params(TINY)
    a, b = evaluate(params, TINY, samples, sc, batch_size=1), evaluate(params, TINY, samples, sc, batch_size=250)
    assert abs(a.loss - b.loss) <= 1e-9
    assert np.max(np.abs(a.rmse_original - b.rmse_original)) <= 1e-9
    assert np.max(np.abs(np.array([p[3] for p in a.parity]) - np.array([p[3] for p in b.parity]))) <= 1e-9


def test_evaluate_empty():
    with pytest.raises(ValueError):
        evaluate(init_params(TINY), TINY, [], ScalerParams((0.0, 0.0), (1.0, 1.0)))


# ------------------------------------------------------------------ train


def test_train_zero_lr_keeps_parameters():
    samples, _ = synthetic_samples(6)
    params = init_params(TINY)
    before = params.state_dict()
    train(params, TINY, samples, samples, TrainConfig(lr=0.0, epochs=3, batch_size=4, dropout=0.2))
    assert all(np.array_equal(before[n], params[n].data) for n in before)


def test_train_same_seed_identical_curves():
    samples, _ = synthetic_samples(8)
    runs = []
    for _ in range(2):
        params = init_params(TINY)
        res = train(params, TINY, samples[:6], samples[6:], TrainConfig(epochs=4, batch_size=3, dropout=0.1))
        runs.append(([(e.train_loss, e.val_loss, e.lr) for e in res.history], params.state_dict()))
    assert runs[0][0] == runs[1][0]
    assert all(runs[0][1][n].tobytes() == runs[1][1][n].tobytes() for n in runs[0][1])


def test_train_reduces_loss_and_tracks_best():
    samples, _ = synthetic_samples(8)
    params = init_params(TINY)
    res = train(params, TINY, samples, samples, TrainConfig(epochs=30, batch_size=8, dropout=0.0))
    losses = [e.val_loss for e in res.history]
    assert losses[-1] < losses[0]
    assert res.best_val_loss == min(losses) and res.history[res.best_epoch - 1].val_loss == res.best_val_loss


def test_train_stop_loss_ends_early():
    samples, _ = synthetic_samples(4)
    params = init_params(TINY)
    res = train(params, TINY, samples, samples, TrainConfig(epochs=50, batch_size=4, dropout=0.0, stop_loss=1e9))
    assert len(res.history) == 1


def test_train_errors():
    samples, _ = synthetic_samples(3)
    with pytest.raises(ValueError, match="empty validation"):
        train(init_params(TINY), TINY, samples, [], TrainConfig(epochs=1))
    with pytest.raises(ValueError, match="empty training"):
        train(init_params(TINY), TINY, [], samples, TrainConfig(epochs=1))


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_train_nan_loss_aborts():
    samples, _ = synthetic_samples(3)
    params = init_params(TINY)
    params["head.output.bias"].data[:] = 1e200
    with pytest.raises(FloatingPointError):
        train(params, TINY, samples, samples, TrainConfig(epochs=1))


def test_log_and_parity_files(tmp_path):
    samples, sc = synthetic_samples(5)
    params = init_params(TINY)
    res = train(params, TINY, samples, samples, TrainConfig(epochs=2, batch_size=5))
    write_training_log(tmp_path / "log.csv", res.history)
    rows = list(csv.DictReader(open(tmp_path / "log.csv")))
    assert list(rows[0]) == ["epoch", "lr", "train_loss", "val_loss", "val_rmse1", "val_rmse2", "val_r2_1", "val_r2_2"]
    assert [r["epoch"] for r in rows] == ["1", "2"]
    write_parity(tmp_path / "parity.csv", evaluate(params, TINY, samples, sc))
    rows = list(csv.DictReader(open(tmp_path / "parity.csv")))
    assert list(rows[0]) == ["row_id", "task", "actual", "predicted"] and len(rows) == 10
