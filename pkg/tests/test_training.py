import math

import numpy as np
import pytest

from orca_swh.data import GridField, synth_generate
from orca_swh.model import ModelConfig, OrcaModel
from orca_swh.training import (Adam, DivergenceError, TrainConfig, UndefinedLossError, evaluate, loss_buoy,
                               loss_phys, metrics_from_errors, persistence_forecast, read_history_csv, split_time,
                               total_loss, train, write_history_csv)

PUBLISHED_PAIRS = [(0.0838, 0.2895), (0.2000, 0.4472), (0.2063, 0.4542), (0.1796, 0.4238), (0.9375, 0.9682)]


def small(seed=0, **kw):
    data = synth_generate(seed, 4, 4, 20, 2, 2)
    cfg = ModelConfig(width=16, layers=1, heads=2, ffn_mult=2, soft_prompt_len=2, patch_len=4, stride=2,
                      window=8, seed=seed, **kw)
    split = split_time(20)
    return OrcaModel.for_dataset(cfg, data.dataset, split.train), data, split


# -- losses --------------------------------------------------------------

def test_loss_buoy_zero_when_exact():
    Y = np.random.default_rng(0).random((3, 3, 4))
    loc = [[0, 1], [2, 2]]
    assert loss_buoy(Y[[0, 2], [1, 2]], Y, loc).item() == 0.0


def test_loss_buoy_arithmetic():
    assert loss_buoy(np.array([[1.0]]), np.full((2, 2, 1), 0.5), [[1, 0]]).item() == pytest.approx(0.25)
    Y = np.zeros((2, 2, 1))
    got = loss_buoy(np.array([[0.1], [0.3]]), Y, [[0, 0], [1, 1]]).item()
    assert got == pytest.approx(0.05, rel=1e-6)


def test_loss_buoy_skips_missing():
    y_obs = np.array([[1.0, 5.0]])
    mask = np.array([[False, True]])
    assert loss_buoy(y_obs, np.zeros((1, 1, 2)), [[0, 0]], mask).item() == pytest.approx(1.0)
    with pytest.raises(UndefinedLossError):
        loss_buoy(y_obs, np.zeros((1, 1, 2)), [[0, 0]], np.ones((1, 2), bool))


def test_loss_phys_arithmetic():
    ref = np.random.default_rng(1).random((3, 2, 4))
    assert loss_phys(ref, ref.copy()).item() == 0.0
    assert loss_phys(ref, ref + 0.1).item() == pytest.approx(0.01, rel=1e-6)
    assert loss_phys(np.zeros((2, 2, 1)), np.array([0, 0, 0.2, 0.2]).reshape(2, 2, 1)).item() == pytest.approx(0.02)


def test_total_loss():
    assert total_loss(0.1, 0.2, 0.3) == pytest.approx(0.16)
    assert total_loss(0.1, 0.2, 0.0) == 0.1
    assert total_loss(0.0, 0.0, 0.3) == 0.0
    with pytest.raises(ValueError):
        total_loss(0.1, 0.2, -1.0)


# -- metrics -------------------------------------------------------------

def test_evaluate_perfect_and_arithmetic():
    Y = np.random.default_rng(2).random((2, 2, 3))
    loc = [[0, 0], [1, 1]]
    m = evaluate(Y, Y[[0, 1], [0, 1]], loc)
    assert (m.mae, m.mse, m.rmse) == (0.0, 0.0, 0.0)
    m = metrics_from_errors([0.1, -0.3])
    assert m.mae == pytest.approx(0.2) and m.mse == pytest.approx(0.05)
    assert m.rmse == pytest.approx(0.2236, abs=1e-4)


@pytest.mark.parametrize("mse,rmse", PUBLISHED_PAIRS)
def test_published_pairs_sqrt_identity(mse, rmse):
    errors = np.full(50, math.sqrt(mse)) * np.where(np.arange(50) % 2, 1.0, -1.0)
    m = metrics_from_errors(errors)
    assert m.mse == pytest.approx(mse, rel=1e-12)
    assert abs(m.rmse - rmse) <= 1e-3


def test_rmse_squared_is_mse():
    m = metrics_from_errors(np.random.default_rng(3).normal(size=100))
    assert abs(m.rmse ** 2 - m.mse) <= 1e-9 * m.mse


def test_persistence_repeats_last_seen_value():
    ds = synth_generate(0, 4, 4, 10, 2, 2).dataset
    ds.missing_mask[ds.swh_index, 0, 5] = True
    pred = persistence_forecast(ds, slice(6, 10))
    np.testing.assert_array_equal(pred[0], ds.swh[0, 4])
    np.testing.assert_array_equal(pred[1], ds.swh[1, 5])


# -- config and split ----------------------------------------------------

def test_train_config_defaults_and_validation():
    c = TrainConfig()
    assert (c.lr, c.alpha, c.max_epochs) == (0.001, 0.3, 50)
    for bad in ({"lr": 0.0}, {"alpha": -0.1}, {"max_epochs": 0}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_split_is_contiguous_8_1_1():
    s = split_time(32)
    assert (s.train, s.val, s.test) == (slice(0, 25), slice(25, 28), slice(28, 32))
    s = split_time(100)
    assert (s.train.stop, s.val.stop, s.test.stop) == (80, 90, 100)


# -- optimizer and loop --------------------------------------------------

def test_adam_leaves_frozen_arrays_alone():
    model, _, _ = small()
    before = model.params.copy()
    opt = Adam(model.params, 0.01)
    opt.step({k: np.ones_like(model.params[k]) for k in model.params.arrays})
    for k in model.params.frozen_names():
        assert model.params[k].tobytes() == before[k].tobytes()
    for k in model.params.trainable_names():
        assert not np.array_equal(model.params[k], before[k])


def test_first_adam_step_is_lr_times_sign():
    model, _, _ = small()
    before = model.params["patch.b4"].copy()
    g = np.random.default_rng(0).normal(size=before.shape).astype(np.float32)
    Adam(model.params, 0.01).step({"patch.b4": g})
    np.testing.assert_allclose(before - model.params["patch.b4"], 0.01 * np.sign(g), rtol=1e-4)


def test_train_history_and_frozen_arrays(tmp_path):
    model, data, split = small()
    frozen = {k: model.params[k].copy() for k in model.params.frozen_names()}
    res = train(model, data.dataset, data.surrogate, split, TrainConfig(max_epochs=3, patience=None))
    assert [r["epoch"] for r in res.history] == [0, 1, 2, 3]
    for k, v in frozen.items():
        assert res.params[k].tobytes() == v.tobytes()
        assert model.params[k].tobytes() == v.tobytes()
    write_history_csv(tmp_path / "h.csv", res.history)
    back = read_history_csv(tmp_path / "h.csv")
    assert back == res.history


def test_train_deterministic():
    runs = []
    for _ in range(2):
        model, data, split = small(seed=3)
        runs.append(train(model, data.dataset, data.surrogate, split, TrainConfig(max_epochs=2, seed=3)))
    assert runs[0].history == runs[1].history
    for k in runs[0].params.arrays:
        assert runs[0].params[k].tobytes() == runs[1].params[k].tobytes()


def test_alpha_zero_ignores_reference():
    results = []
    for ref in ("real", "garbage"):
        model, data, split = small(seed=1)
        sur = data.surrogate
        if ref == "garbage":
            sur = GridField(np.random.default_rng(9).normal(50, 20, sur.shape).astype(np.float32), "surrogate")
        res = train(model, data.dataset, sur, split, TrainConfig(max_epochs=2, alpha=0.0, patience=None))
        results.append(res)
    a, b = results
    for k in a.params.arrays:
        assert a.params[k].tobytes() == b.params[k].tobytes()
    assert [r["L1"] for r in a.history] == [r["L1"] for r in b.history]
    assert a.history[1]["L2"] != b.history[1]["L2"]


def test_alpha_positive_needs_reference():
    model, data, split = small()
    with pytest.raises(ValueError, match="alpha"):
        train(model, data.dataset, None, split, TrainConfig(max_epochs=1))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_epoch():
    model, data, split = small()
    huge = GridField(np.full(data.surrogate.shape, 3e38, np.float32), "surrogate")
    with pytest.raises(DivergenceError) as info:
        train(model, data.dataset, huge, split, TrainConfig(max_epochs=2))
    assert info.value.epoch == 1


def test_early_stopping_patience():
    model, data, split = small()
    res = train(model, data.dataset, data.surrogate, split, TrainConfig(max_epochs=40, patience=1, lr=0.5))
    assert len(res.history) - 1 < 40
