"""Losses, metrics, optimisers and the training loops."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import network as N
from .defense.resample import bicubic_downscale
from .errors import ConfigurationError, DimensionError, TrainingDivergedError
from .network import NetworkSpec

log = logging.getLogger(__name__)


# --- losses -------------------------------------------------------------------


def mae_loss(pred: np.ndarray, target: np.ndarray):
    """Mean absolute error and its gradient w.r.t. ``pred``."""
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {target.shape}", axis="shape")
    d = pred.astype(np.float64) - target
    return float(np.mean(np.abs(d))), (np.sign(d) / d.size).astype(pred.dtype)


def mse_loss(pred: np.ndarray, target: np.ndarray):
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {target.shape}", axis="shape")
    d = pred.astype(np.float64) - target
    return float(np.mean(d * d)), (2.0 * d / d.size).astype(pred.dtype)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels, reduction: str = "mean"):
    """Softmax cross-entropy. ``reduction="none"`` returns per-sample losses
    and the gradient of their sum."""
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    if labels.shape != (n,):
        raise DimensionError(f"{labels.shape} labels for {n} logits", axis="batch")
    lsm = log_softmax(logits)
    per = -lsm[np.arange(n), labels]
    grad = np.exp(lsm)
    grad[np.arange(n), labels] -= 1.0
    if reduction == "mean":
        return float(per.mean()), (grad / n).astype(logits.dtype)
    if reduction == "sum":
        return float(per.sum()), grad.astype(logits.dtype)
    if reduction == "none":
        return per, grad.astype(logits.dtype)
    raise ConfigurationError(f"unknown reduction {reduction!r}")


LOSSES = {"mae": mae_loss, "mse": mse_loss}


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB over all pixels; ``inf`` for identical inputs."""
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}", axis="shape")
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


# --- optimisers ---------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    loss: str = "mae"
    seed: int = 0
    patch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.0  # sgd only

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.learning_rate <= 0 or self.patch_size <= 0:
            raise ConfigurationError(f"non-positive training hyperparameter in {self}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("mae", "mse", "cross_entropy"):
            raise ConfigurationError(f"unknown loss {self.loss!r}")


@dataclass
class AdamState:
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def _zeros_like(params):
    return [{k: np.zeros(np.shape(a), dtype=np.float64) for k, a in p.items()} for p in params]


def adam_step(params, grads, state: AdamState | None, lr: float = 1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    if state is None or state.t == 0 and not state.m:
        state = AdamState(0, _zeros_like(params), _zeros_like(params))
    t = state.t + 1
    new_p, new_m, new_v = [], [], []
    c1, c2 = 1.0 - beta1**t, 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        np_, nm, nv = {}, {}, {}
        for k, a in p.items():
            gk = np.asarray(g.get(k, 0.0), dtype=np.float64)
            nm[k] = beta1 * m[k] + (1 - beta1) * gk
            nv[k] = beta2 * v[k] + (1 - beta2) * gk * gk
            step = lr * (nm[k] / c1) / (np.sqrt(nv[k] / c2) + eps)
            np_[k] = (a.astype(np.float64) - step).astype(a.dtype)
        new_p.append(np_)
        new_m.append(nm)
        new_v.append(nv)
    return new_p, AdamState(t, new_m, new_v)


def sgd_step(params, grads, state=None, lr: float = 1e-2, momentum: float = 0.0):
    """Plain / heavy-ball SGD. ``state`` is the velocity list (or None)."""
    vel = _zeros_like(params) if state is None else state
    new_p, new_vel = [], []
    for p, g, v in zip(params, grads, vel):
        np_, nv = {}, {}
        for k, a in p.items():
            nv[k] = momentum * v[k] + np.asarray(g.get(k, 0.0), dtype=np.float64)
            np_[k] = (a.astype(np.float64) - lr * nv[k]).astype(a.dtype)
        new_p.append(np_)
        new_vel.append(nv)
    return new_p, new_vel


# --- data ---------------------------------------------------------------------


@dataclass
class PairSet:
    lr: np.ndarray  # (count, 3, k, k)
    hr: np.ndarray  # (count, 3, 2k, 2k)
    skipped: int = 0

    def __len__(self):
        return len(self.lr)


def make_lr_hr_pairs(hr_images, patch: int, count: int, seed: int = 0, scale: int = 2) -> PairSet:
    """Random ``scale*patch`` HR crops and their bicubic-downscaled LR versions."""
    imgs = [np.asarray(im, dtype=np.float32).reshape(3, *np.shape(im)[-2:]) for im in hr_images]
    size = scale * patch
    usable = [im for im in imgs if im.shape[1] >= size and im.shape[2] >= size]
    skipped = len(imgs) - len(usable)
    if skipped:
        log.warning("skipped %d images smaller than %dx%d", skipped, size, size)
    if not usable:
        return PairSet(np.zeros((0, 3, patch, patch), np.float32), np.zeros((0, 3, size, size), np.float32), skipped)
    rng = np.random.default_rng(seed)
    hr = np.empty((count, 3, size, size), dtype=np.float32)
    for i in range(count):
        im = usable[rng.integers(len(usable))]
        y = rng.integers(im.shape[1] - size + 1)
        x = rng.integers(im.shape[2] - size + 1)
        hr[i] = im[:, y:y + size, x:x + size]
    lr = bicubic_downscale(hr, scale)
    return PairSet(lr, hr, skipped)


# --- loops --------------------------------------------------------------------


@dataclass
class TrainResult:
    weights: list
    history: list  # epoch-mean training loss


def fit(
    net: NetworkSpec,
    weights,
    groups,
    cfg: TrainConfig,
    loss_fn: Callable | None = None,
    on_epoch: Callable | None = None,
) -> TrainResult:
    """Minibatch training of ``net``; deterministic under ``cfg.seed``.

    ``groups`` is a list of ``(inputs, targets)`` pairs. Inputs within a group
    share a shape; minibatches never mix groups, and batch order is shuffled
    across groups every epoch.
    """
    groups = [(x, t) for x, t in groups if len(x)]
    if not groups:
        raise ConfigurationError("empty dataset")
    if loss_fn is None:
        loss_fn = cross_entropy if cfg.loss == "cross_entropy" else LOSSES[cfg.loss]
    rng = np.random.default_rng(cfg.seed)
    state = None
    history = []
    n_total = sum(len(x) for x, _ in groups)
    for epoch in range(cfg.epochs):
        batches = []
        for gi, (x, _) in enumerate(groups):
            order = rng.permutation(len(x))
            batches += [(gi, order[b0:b0 + cfg.batch_size]) for b0 in range(0, len(x), cfg.batch_size)]
        total = 0.0
        for bi in rng.permutation(len(batches)):
            gi, idx = batches[bi]
            inputs, targets = groups[gi]
            tape = N.Tape()
            out = N.forward(net, weights, inputs[idx], tape)
            loss, g = loss_fn(out, targets[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            _, grads = N.backward(net, weights, tape, g)
            if cfg.optimizer == "adam":
                weights, state = adam_step(weights, grads, state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
            else:
                weights, state = sgd_step(weights, grads, state, cfg.learning_rate, cfg.momentum)
            total += loss * len(idx)
        mean = total / n_total
        history.append(mean)
        log.info("epoch %d loss %.6f", epoch, mean)
        if on_epoch is not None:
            on_epoch(epoch, mean)
    return TrainResult(weights, history)


def _is_expanded(net: NetworkSpec) -> bool:
    return any(isinstance(layer, N.LinearBlock) for layer in net.layers) and not any(
        isinstance(layer, N.Conv) for layer in net.layers
    )


def train_sr(net: NetworkSpec, dataset: PairSet, cfg: TrainConfig, weights=None, allow_collapsed: bool = False,
             on_epoch: Callable | None = None) -> TrainResult:
    """Train an SR network (expanded form) on LR/HR pairs with an MAE or MSE loss."""
    if not allow_collapsed and not _is_expanded(net):
        raise ConfigurationError("train_sr expects an expanded (linear-block) network; pass allow_collapsed=True")
    if cfg.loss not in LOSSES:
        raise ConfigurationError(f"SR training uses mae or mse, not {cfg.loss!r}")
    if len(dataset) == 0:
        raise ConfigurationError("empty SR dataset")
    if weights is None:
        from .models import init_sr_weights

        weights = init_sr_weights(net, cfg.seed)
    return fit(net, weights, [(dataset.lr, dataset.hr)], cfg, on_epoch=on_epoch)
