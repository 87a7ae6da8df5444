import time

import numpy as np
import pytest

from sesr_defense import attacks as A
from sesr_defense import data as D
from sesr_defense import models as M
from sesr_defense.collapse import collapse_network
from sesr_defense.training import TrainConfig, make_lr_hr_pairs, train_sr

# Desk-scale settings shared by the acceptance suite and the slower tests.
SR_CORPUS = dict(n=20, size=96, seed=0)
SR_HELDOUT = dict(n=8, size=96, seed=1234)
SR_PAIRS = dict(patch=24, count=256, seed=0)
SR_TRAIN = TrainConfig(epochs=10, batch_size=16, learning_rate=1e-3, loss="mae", seed=0)
CLS_TRAIN = dict(n_per_class=1000, size=32, seed=0)
CLS_EVAL = dict(n_per_class=50, size=32, seed=9)
CLS_EPOCHS = 20


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def trained_sesr_m2():
    """(expanded net, expanded weights, collapsed net, collapsed weights, epoch history, seconds)."""
    start = time.perf_counter()
    net = M.build_sesr("sesr_m2", "expanded")
    pairs = make_lr_hr_pairs(D.synthetic_corpus(**SR_CORPUS), **SR_PAIRS)
    result = train_sr(net, pairs, SR_TRAIN)
    cnet, cw = collapse_network(net, result.weights)
    return net, result.weights, cnet, cw, result.history, time.perf_counter() - start


@pytest.fixture(scope="session")
def shapes_eval():
    return D.shapes_dataset(**CLS_EVAL)


@pytest.fixture(scope="session")
def toy_classifier():
    """(classifier, training seconds)."""
    start = time.perf_counter()
    x, y = D.shapes_dataset(**CLS_TRAIN)
    model = A.train_toy_classifier(x, y, epochs=CLS_EPOCHS, lr=1e-3, seed=0)
    return model, time.perf_counter() - start


@pytest.fixture(scope="session")
def small_classifier():
    """Quick two-epoch classifier on few images, for plumbing tests."""
    x, y = D.shapes_dataset(20, 32, seed=3)
    return A.train_toy_classifier(x, y, epochs=2, seed=0)


def finite_difference(f, x, idx, eps=1e-6):
    x = x.copy()
    x[idx] += eps
    fp = f(x)
    x[idx] -= 2 * eps
    fm = f(x)
    return (fp - fm) / (2 * eps)


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def directional_grad_errors(net, weights, x, seed=0, eps=1e-2):
    """Relative error of backprop vs central differences along random directions.

    The scalar is ``sum(forward(x) * r)`` for a fixed random ``r``. The step
    is large enough to sit well above float32 rounding. Returns
    ``{"input": err, "<layer>.<param>": err, ...}``.
    """
    from sesr_defense import network as N

    rng = np.random.default_rng(seed)
    tape = N.Tape()
    out = N.forward(net, weights, x, tape)
    r = rng.normal(size=out.shape)

    def loss(xx, ww):
        return float(np.sum(N.forward(net, ww, xx).astype(np.float64) * r))

    gx, grads = N.backward(net, weights, tape, r.astype(out.dtype))
    errs = {}
    d = rng.normal(size=x.shape).astype(x.dtype)
    fd = (loss(x + eps * d, weights) - loss(x - eps * d, weights)) / (2 * eps)
    errs["input"] = rel_err(fd, float(np.sum(gx.astype(np.float64) * d)))
    for i, params in enumerate(weights):
        for name, value in params.items():
            d = rng.normal(size=np.shape(value))
            plus = [dict(p) for p in weights]
            minus = [dict(p) for p in weights]
            plus[i][name] = (value + eps * d).astype(np.asarray(value).dtype)
            minus[i][name] = (value - eps * d).astype(np.asarray(value).dtype)
            fd = (loss(x, plus) - loss(x, minus)) / (2 * eps)
            errs[f"{i}.{name}"] = rel_err(fd, float(np.sum(np.asarray(grads[i][name], dtype=np.float64) * d)))
    return errs


def gradient_cases(seed):
    """(name, net, weights, x) for every differentiable layer kind, random small shapes."""
    from sesr_defense import network as N
    from sesr_defense.network import LinearBlockSpec
    from sesr_defense.tensor import ConvSpec

    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 3))
    c = int(rng.integers(1, 4))
    co = int(rng.integers(1, 4))
    h, w = 2 * int(rng.integers(2, 5)), 2 * int(rng.integers(2, 5))
    k = int(rng.choice([1, 3, 5]))
    nets = {
        "conv": [N.Conv(ConvSpec(k, k, c, co, has_bias=True))],
        "conv_strided": [N.Conv(ConvSpec(3, 3, c, co, stride=2, padding=1))],
        "conv_transpose": [N.ConvTranspose(ConvSpec(3, 3, c, co, stride=2, padding=1, output_padding=1,
                                                    has_bias=True))],
        "linear_block": [N.LinearBlock(LinearBlockSpec(k, c, co, 4))],
        "linear_block_residual": [N.LinearBlock(LinearBlockSpec(k, c, c, 4, short_residual=True))],
        "relu": [N.Activation("relu")],
        "prelu": [N.Activation("prelu")],
        "depth_to_space": [N.Conv(ConvSpec(1, 1, c, 4 * co)), N.DepthToSpace(2)],
        "long_residual_tiled": [N.ResidualBegin("r"), N.Conv(ConvSpec(3, 3, c, 4 * c)), N.ResidualEnd("r")],
        "avg_pool": [N.AvgPool2()],
        "global_avg_pool": [N.GlobalAvgPool()],
        "dense": [N.Flatten(), N.Dense(c * h * w, co)],
    }
    cases = []
    for name, layers in nets.items():
        net = N.NetworkSpec(name, tuple(layers))
        weights = N.init_weights(net, seed)
        for p in weights:
            for key in p:  # exercise biases and slopes away from their zero/constant init
                p[key] = (p[key] + 0.1 * rng.normal(size=np.shape(p[key]))).astype(np.float32)
        x = rng.normal(size=(n, c, h, w))
        x = (np.sign(x) * (0.1 + np.abs(x))).astype(np.float32)  # keep clear of the relu kink
        cases.append((name, net, weights, x))
    return cases


def loss_grad_errors(seed, eps=1e-2):
    """Relative directional-derivative errors of the three losses."""
    from sesr_defense.training import cross_entropy, mae_loss, mse_loss

    rng = np.random.default_rng(seed)
    out = {}
    pred = rng.normal(size=(2, 3, 4, 4)).astype(np.float32)
    gap = rng.normal(size=pred.shape)
    target = (pred + np.sign(gap) * (0.1 + np.abs(gap))).astype(np.float32)  # |pred - target| off the kink
    logits = rng.normal(size=(5, 4)).astype(np.float32)
    labels = rng.integers(0, 4, size=5)
    for name, fn, a, b in (("mae", mae_loss, pred, target), ("mse", mse_loss, pred, target),
                           ("cross_entropy", cross_entropy, logits, labels)):
        _, g = fn(a, b)
        d = rng.normal(size=a.shape).astype(np.float32)
        fd = (fn(a + eps * d, b)[0] - fn(a - eps * d, b)[0]) / (2 * eps)
        out[name] = rel_err(fd, float(np.sum(g.astype(np.float64) * d)))
    return out
