import math

import numpy as np
import pytest

from conftest import loss_grad_errors
from sesr_defense import data as D
from sesr_defense import models as M
from sesr_defense import network as N
from sesr_defense.defense import interpolate_upscale
from sesr_defense.errors import ConfigurationError, DimensionError, TrainingDivergedError
from sesr_defense.training import (
    PairSet,
    TrainConfig,
    adam_step,
    cross_entropy,
    fit,
    mae_loss,
    make_lr_hr_pairs,
    mse_loss,
    psnr,
    sgd_step,
    train_sr,
)


def _small_sr():
    return M.build_net("sesr_m2", "expanded", p=16)


# --- losses and metrics -------------------------------------------------------


def test_psnr_values():
    a = np.zeros((1, 3, 4, 4))
    assert psnr(a, a) == math.inf
    assert psnr(a, np.ones_like(a)) == pytest.approx(0.0)
    assert psnr(a, np.full_like(a, 0.5)) == pytest.approx(10 * math.log10(4), abs=1e-9)
    assert psnr(a, np.full_like(a, 0.5)) == pytest.approx(6.02, abs=0.01)
    with pytest.raises(DimensionError):
        psnr(a, np.zeros((1, 3, 4, 5)))


def test_loss_values():
    p = np.array([0.0, 1.0, 2.0])
    t = np.array([1.0, 1.0, 0.0])
    assert mae_loss(p, t)[0] == pytest.approx(1.0)
    assert mse_loss(p, t)[0] == pytest.approx(5 / 3)
    np.testing.assert_allclose(mae_loss(p, t)[1], [-1 / 3, 0, 1 / 3])
    with pytest.raises(DimensionError):
        mae_loss(p, t[:2])


def test_cross_entropy():
    logits = np.zeros((2, 4), np.float32)
    loss, g = cross_entropy(logits, [0, 3])
    assert loss == pytest.approx(math.log(4))
    np.testing.assert_allclose(g.sum(axis=1), 0, atol=1e-7)
    per, _ = cross_entropy(logits, [0, 3], reduction="none")
    assert per.shape == (2,)
    big = np.array([[1000.0, 0.0]])
    assert math.isfinite(cross_entropy(big, [1])[0])
    with pytest.raises(DimensionError):
        cross_entropy(logits, [0])
    with pytest.raises(ConfigurationError):
        cross_entropy(logits, [0, 1], reduction="max")


@pytest.mark.parametrize("seed", range(3))
def test_loss_gradients(seed):
    errs = loss_grad_errors(seed)
    assert max(errs.values()) < 1e-2, errs


# --- optimisers ---------------------------------------------------------------


def test_adam_first_step():
    params = [{"w": np.array([1.0])}]
    new, state = adam_step(params, [{"w": np.array([0.1])}], None, lr=0.01)
    assert new[0]["w"][0] - 1.0 == pytest.approx(-0.00999999, abs=1e-8)
    assert state.t == 1


def test_adam_zero_gradient():
    params = [{"w": np.array([1.0, 2.0])}]
    p1, s1 = adam_step(params, [{"w": np.array([0.5, -0.5])}], None)
    p2, s2 = adam_step(p1, [{"w": np.zeros(2)}], s1)
    assert s2.m[0]["w"] == pytest.approx(0.9 * s1.m[0]["w"])
    # a zero gradient still moves through the first moment; with none stored it does not
    p3, _ = adam_step(params, [{"w": np.zeros(2)}], None)
    np.testing.assert_array_equal(p3[0]["w"], params[0]["w"])


def test_adam_is_elementwise():
    g = np.array([0.3, -0.2])
    new, _ = adam_step([{"a": np.zeros(2), "b": np.zeros(2)}], [{"a": g, "b": g}], None)
    np.testing.assert_array_equal(new[0]["a"], new[0]["b"])


def test_sgd_step():
    new, vel = sgd_step([{"w": np.array([1.0])}], [{"w": np.array([2.0])}], lr=0.1, momentum=0.5)
    assert new[0]["w"][0] == pytest.approx(0.8)
    new, _ = sgd_step(new, [{"w": np.array([2.0])}], vel, lr=0.1, momentum=0.5)
    assert new[0]["w"][0] == pytest.approx(0.8 - 0.1 * 3.0)


def test_config_validation():
    for bad in (dict(epochs=0), dict(learning_rate=-1.0), dict(optimizer="rmsprop"), dict(loss="huber")):
        with pytest.raises(ConfigurationError):
            TrainConfig(**bad)


# --- pairs --------------------------------------------------------------------


def test_pairs_shapes_and_determinism():
    hr = D.synthetic_corpus(3, 48, seed=0)
    a = make_lr_hr_pairs(hr, 12, 10, seed=4)
    b = make_lr_hr_pairs(hr, 12, 10, seed=4)
    assert len(a) == 10 and a.lr.shape == (10, 3, 12, 12) and a.hr.shape == (10, 3, 24, 24)
    np.testing.assert_array_equal(a.hr, b.hr)
    assert not np.array_equal(a.hr, make_lr_hr_pairs(hr, 12, 10, seed=5).hr)


def test_constant_hr_gives_constant_lr():
    ds = make_lr_hr_pairs([np.full((3, 32, 32), 0.25, np.float32)], 8, 3)
    np.testing.assert_allclose(ds.lr, 0.25, atol=1e-6)


def test_small_images_are_skipped():
    hr = [np.zeros((3, 10, 10), np.float32), np.zeros((3, 40, 40), np.float32)]
    ds = make_lr_hr_pairs(hr, 16, 4)
    assert ds.skipped == 1 and len(ds) == 4
    ds = make_lr_hr_pairs(hr[:1], 16, 4)
    assert ds.skipped == 1 and len(ds) == 0


# --- loops --------------------------------------------------------------------


def test_train_sr_rejects_bad_input():
    ds = PairSet(np.zeros((0, 3, 4, 4), np.float32), np.zeros((0, 3, 8, 8), np.float32))
    with pytest.raises(ConfigurationError):
        train_sr(_small_sr(), ds, TrainConfig())
    ds = PairSet(np.zeros((1, 3, 4, 4), np.float32), np.zeros((1, 3, 8, 8), np.float32))
    with pytest.raises(ConfigurationError):
        train_sr(M.build_net("sesr_m2"), ds, TrainConfig())
    with pytest.raises(ConfigurationError):
        train_sr(_small_sr(), ds, TrainConfig(loss="cross_entropy"))


def test_learns_nearest_upscale_from_random_init():
    lr = np.random.default_rng(0).random((32, 3, 16, 16), dtype=np.float32)
    ds = PairSet(lr, interpolate_upscale(lr, "nearest"))
    net = _small_sr()
    result = train_sr(net, ds, TrainConfig(epochs=20, batch_size=8), weights=N.init_weights(net, 0))
    assert result.history[0] > 0.1
    assert result.history[-1] < 0.02


def test_single_pair_overfit():
    ds = make_lr_hr_pairs(D.synthetic_corpus(1, 64, seed=5), 8, 1)
    result = train_sr(_small_sr(), ds, TrainConfig(epochs=150, batch_size=1, learning_rate=3e-3))
    assert result.history[-1] < 1e-2


def test_training_is_deterministic():
    ds = make_lr_hr_pairs(D.synthetic_corpus(2, 32, seed=1), 8, 8)
    cfg = TrainConfig(epochs=2, batch_size=4, seed=3)
    a = train_sr(_small_sr(), ds, cfg)
    b = train_sr(_small_sr(), ds, cfg)
    assert a.history == b.history
    for pa, pb in zip(a.weights, b.weights):
        for k in pa:
            np.testing.assert_array_equal(pa[k], pb[k])


def test_mae_and_mse_differ():
    ds = make_lr_hr_pairs(D.synthetic_corpus(2, 32, seed=1), 8, 8)
    a = train_sr(_small_sr(), ds, TrainConfig(epochs=1, batch_size=4, loss="mae"))
    b = train_sr(_small_sr(), ds, TrainConfig(epochs=1, batch_size=4, loss="mse"))
    assert not np.array_equal(a.weights[-3]["B"], b.weights[-3]["B"])


@pytest.mark.filterwarnings("ignore:overflow")
def test_divergence_names_the_epoch():
    net = N.NetworkSpec("d", (N.Conv(N.ConvSpec(1, 1, 1, 1)),))
    x = np.ones((2, 1, 2, 2), np.float32)
    cfg = TrainConfig(epochs=5, batch_size=2, optimizer="sgd", learning_rate=1e30, loss="mse")
    with pytest.raises(TrainingDivergedError) as info:
        fit(net, [{"w": np.ones((1, 1, 1, 1), np.float32)}], [(x, x * 0)], cfg)
    assert info.value.epoch >= 0


@pytest.mark.slow
def test_sr_training_loss_trends_down(trained_sesr_m2):
    # epoch means averaged over windows of two
    hist = np.asarray(trained_sesr_m2[4])
    smooth = (hist[1:] + hist[:-1]) / 2
    assert np.mean(np.diff(smooth) <= 0) >= 0.9
