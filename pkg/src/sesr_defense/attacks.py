"""Gray-box L-infinity attacks against a differentiable classifier.

Attack functions see only a :class:`Classifier`; the preprocessing defense
is never part of the gradient path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import network as N
from .errors import ConfigurationError
from .network import NetworkSpec
from .tensor import ConvSpec
from .training import TrainConfig, cross_entropy, fit

KINDS = ("fgsm", "pgd", "apgd", "di2fgsm")
APGD_CHECKPOINTS = (0.22, 0.4, 0.55, 0.7, 0.85)
APGD_RHO = 0.75


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "pgd"
    epsilon: float = 8 / 255
    steps: int = 10
    alpha: float = 2 / 255
    random_start: bool = True
    momentum: float | None = None  # None -> per-kind default
    diversity_prob: float = 0.5
    adaptive_step: bool = True  # apgd step halving
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown attack {self.kind!r}")
        if not 0 < self.epsilon <= 1:
            raise ConfigurationError(f"epsilon must be in (0, 1], got {self.epsilon}")
        if self.alpha <= 0:
            raise ConfigurationError("alpha must be positive")
        if not 0 <= self.diversity_prob <= 1:
            raise ConfigurationError("diversity_prob must be in [0, 1]")
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")

    @property
    def effective_momentum(self) -> float:
        if self.momentum is not None:
            return self.momentum
        return {"apgd": 0.25, "di2fgsm": 0.9}.get(self.kind, 0.0)


@dataclass
class Classifier:
    net: NetworkSpec
    weights: list
    num_classes: int
    batch: int = 256

    def logits(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float32)
        parts = [N.forward(self.net, self.weights, x[i:i + self.batch]) for i in range(0, len(x), self.batch)]
        return np.concatenate(parts) if parts else np.zeros((0, self.num_classes), np.float32)

    def loss_and_grad(self, x: np.ndarray, y):
        """Per-sample cross-entropy and its gradient w.r.t. each input."""
        tape = N.Tape()
        out = N.forward(self.net, self.weights, np.asarray(x, dtype=np.float32), tape)
        loss, g = cross_entropy(out, y, reduction="none")
        gx, _ = N.backward(self.net, self.weights, tape, g)
        return loss, gx.astype(np.float64)

    def loss(self, x, y) -> np.ndarray:
        return cross_entropy(self.logits(x), y, reduction="none")[0]


def classify(model: Classifier, image: np.ndarray):
    """Labels (argmax, lowest index wins ties) and logits."""
    logits = model.logits(image)
    return np.argmax(logits, axis=1), logits


def build_toy_classifier(num_classes: int, input_size: int = 32, widths=(16, 32, 64)) -> NetworkSpec:
    """Three conv/relu/avg-pool blocks and a dense head over the flattened features."""
    if input_size % 8:
        raise ConfigurationError(f"input size must be a multiple of 8, got {input_size}")
    layers = []
    c = 3
    for w in widths:
        layers += [N.Conv(ConvSpec(3, 3, c, w, has_bias=True)), N.Activation("relu"), N.AvgPool2()]
        c = w
    side = input_size // 8
    layers += [N.Flatten(), N.Dense(c * side * side, num_classes)]
    return NetworkSpec("toy_classifier", tuple(layers))


def he_init(net: NetworkSpec, seed: int = 0) -> N.WeightStore:
    """Normal(0, 2/fan_in) weights and zero biases; xavier stalls this ReLU stack."""
    rng = np.random.default_rng(seed)
    out = []
    for layer in net.layers:
        params = {}
        for name, shape in layer.param_shapes().items():
            if name == "w":
                fan_in = int(np.prod(shape[1:]))
                params[name] = (rng.normal(size=shape) * math.sqrt(2.0 / fan_in)).astype(np.float32)
            else:
                params[name] = np.zeros(shape, dtype=np.float32)
        out.append(params)
    return out


def train_toy_classifier(
    images: np.ndarray,
    labels: np.ndarray,
    epochs: int = 15,
    lr: float = 1e-3,
    seed: int = 0,
    num_classes: int | None = None,
    batch_size: int = 32,
) -> Classifier:
    """Cross-entropy training with Adam on square images."""
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise ConfigurationError("empty training set")
    if images.ndim != 4 or images.shape[2] != images.shape[3]:
        raise ConfigurationError(f"expected square (n, 3, s, s) images, got {images.shape}")
    k = int(num_classes if num_classes is not None else labels.max() + 1)
    if k < 2:
        raise ConfigurationError("need at least two classes")
    net = build_toy_classifier(k, images.shape[2])
    cfg = TrainConfig(epochs=epochs, batch_size=batch_size, learning_rate=lr, loss="cross_entropy", seed=seed)
    result = fit(net, he_init(net, seed), [(images, labels)], cfg)
    return Classifier(net, result.weights, k)


def upscaled_variant(model: Classifier) -> Classifier:
    """Classifier for 2x enlarged inputs: a 2x2 average pool in front of ``model``.

    It shares the weights, so an input that is an exact 2x nearest upscale
    gets exactly the logits ``model`` gives the original.
    """
    net = NetworkSpec(f"{model.net.name}_x2", (N.AvgPool2(),) + tuple(model.net.layers), model.net.scale)
    return Classifier(net, [{}] + list(model.weights), model.num_classes, model.batch)


def correctly_classified(model: Classifier, images: np.ndarray, labels: np.ndarray) -> np.ndarray:
    pred, _ = classify(model, images)
    return np.flatnonzero(pred == labels)


# --- attacks ------------------------------------------------------------------


def _project(xa: np.ndarray, x0: np.ndarray, eps: float) -> np.ndarray:
    return np.clip(np.clip(xa, x0 - eps, x0 + eps), 0.0, 1.0)


def fgsm(x: np.ndarray, y, model: Classifier, eps: float = 8 / 255) -> np.ndarray:
    x0 = np.asarray(x, dtype=np.float64)
    _, g = model.loss_and_grad(x, y)
    return np.clip(x0 + eps * np.sign(g), 0.0, 1.0).astype(np.float32)


def image_seed(seed: int, index: int) -> int:
    """Per-image seed, so results do not depend on batch order."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _rngs(cfg: AttackConfig, n: int, seeds) -> list:
    if seeds is None:
        seeds = [image_seed(cfg.seed, i) for i in range(n)]
    if len(seeds) != n:
        raise ConfigurationError(f"{len(seeds)} seeds for {n} images")
    return [np.random.default_rng(s) for s in seeds]


def _start(x0: np.ndarray, cfg: AttackConfig, rngs: list) -> np.ndarray:
    if cfg.random_start:
        noise = np.stack([r.uniform(-cfg.epsilon, cfg.epsilon, size=x0.shape[1:]) for r in rngs])
        return np.clip(x0 + noise, 0.0, 1.0)
    return x0.copy()


def pgd(x: np.ndarray, y, model: Classifier, cfg: AttackConfig, trace: list | None = None, seeds=None) -> np.ndarray:
    """Sign-gradient ascent with projection onto the eps-ball and [0, 1]."""
    x0 = np.asarray(x, dtype=np.float64)
    xa = _start(x0, cfg, _rngs(cfg, len(x0), seeds))
    for _ in range(cfg.steps):
        _, g = model.loss_and_grad(xa, y)
        xa = _project(xa + cfg.alpha * np.sign(g), x0, cfg.epsilon)
        if trace is not None:
            trace.append(xa.copy())
    return xa.astype(np.float32)


def apgd(x: np.ndarray, y, model: Classifier, cfg: AttackConfig, trace: list | None = None, seeds=None) -> np.ndarray:
    """Simplified Auto-PGD.

    Momentum step ``x + (1-m)(z - x) + m(x - x_prev)`` with ``z`` the PGD
    step. At fixed checkpoints, any image whose loss improved on fewer than
    75% of the steps since the previous checkpoint has its step size halved
    and restarts from its best iterate. Returns the best-loss iterate.
    """
    if cfg.steps < 2:
        raise ConfigurationError("apgd needs at least 2 steps")
    m = cfg.effective_momentum
    x0 = np.asarray(x, dtype=np.float64)
    n = x0.shape[0]
    bshape = (n,) + (1,) * (x0.ndim - 1)
    checkpoints = {math.ceil(f * cfg.steps) for f in APGD_CHECKPOINTS}

    xa = _start(x0, cfg, _rngs(cfg, n, seeds))
    x_prev = xa.copy()
    loss, g = model.loss_and_grad(xa, y)
    best_x, best_loss = xa.copy(), loss.copy()
    alpha = np.full(n, cfg.alpha)
    improved = np.zeros(n)
    last_ckpt = 0
    for k in range(cfg.steps):
        z = _project(xa + alpha.reshape(bshape) * np.sign(g), x0, cfg.epsilon)
        if k == 0 or m == 0:
            x_new = z
        else:
            x_new = _project(xa + (1 - m) * (z - xa) + m * (xa - x_prev), x0, cfg.epsilon)
        x_prev, xa = xa, x_new
        if trace is not None:
            trace.append(xa.copy())
        new_loss, g = model.loss_and_grad(xa, y)
        improved += new_loss > loss
        loss = new_loss
        better = loss > best_loss
        best_x[better] = xa[better]
        best_loss[better] = loss[better]
        if cfg.adaptive_step and (k + 1) in checkpoints:
            halve = improved / (k + 1 - last_ckpt) < APGD_RHO
            if halve.any():
                alpha[halve] /= 2
                xa[halve] = best_x[halve]
                x_prev[halve] = best_x[halve]
                loss, g = model.loss_and_grad(xa, y)
            improved[:] = 0
            last_ckpt = k + 1
    return best_x.astype(np.float32)


def _selection(n_in: int, n_out: int) -> np.ndarray:
    """0/1 matrix (n_out, n_in) of nearest-neighbour resampling."""
    S = np.zeros((n_out, n_in))
    S[np.arange(n_out), (np.arange(n_out) * n_in) // n_out] = 1.0
    return S


def _diverse(xa: np.ndarray, rngs: list, p: float):
    """Random shrink + zero pad of each image with probability ``p``.

    Returns the transformed batch and a function mapping gradients back.
    """
    n, c, h, w = xa.shape
    out = xa.copy()
    plans = []
    for i, rng in enumerate(rngs):
        if rng.random() >= p:
            continue
        rh = int(rng.integers(math.ceil(0.9 * h), h + 1))
        rw = max(1, round(rh * w / h))
        top = int(rng.integers(0, h - rh + 1))
        left = int(rng.integers(0, w - rw + 1))
        Sy, Sx = _selection(h, rh), _selection(w, rw)
        out[i] = 0.0
        out[i, :, top:top + rh, left:left + rw] = np.einsum("ah,chw,bw->cab", Sy, xa[i], Sx)
        plans.append((i, Sy, Sx, top, left))

    def pull_back(g: np.ndarray) -> np.ndarray:
        g = g.copy()
        for i, Sy, Sx, top, left in plans:
            crop = g[i, :, top:top + Sy.shape[0], left:left + Sx.shape[0]]
            g[i] = np.einsum("ah,cab,bw->chw", Sy, crop, Sx)
        return g

    return out, pull_back


def di2fgsm(x: np.ndarray, y, model: Classifier, cfg: AttackConfig, trace: list | None = None,
            seeds=None) -> np.ndarray:
    """Iterative FGSM with random input diversity (and optional momentum). No random start."""
    mu = cfg.effective_momentum
    x0 = np.asarray(x, dtype=np.float64)
    rngs = _rngs(cfg, len(x0), seeds)
    xa = x0.copy()
    acc = np.zeros_like(x0)
    for _ in range(cfg.steps):
        xt, pull_back = _diverse(xa, rngs, cfg.diversity_prob)
        _, gt = model.loss_and_grad(xt, y)
        g = pull_back(gt)
        if mu:
            l1 = np.abs(g).mean(axis=tuple(range(1, g.ndim)), keepdims=True)
            acc = mu * acc + g / np.maximum(l1, 1e-12)
            direction = np.sign(acc)
        else:
            direction = np.sign(g)
        xa = _project(xa + cfg.alpha * direction, x0, cfg.epsilon)
        if trace is not None:
            trace.append(xa.copy())
    return xa.astype(np.float32)


def run_attack(x: np.ndarray, y, model: Classifier, cfg: AttackConfig, seeds=None) -> np.ndarray:
    """Dispatch on ``cfg.kind``; ``seeds`` gives one RNG seed per image."""
    if cfg.kind == "fgsm":
        return fgsm(x, y, model, cfg.epsilon)
    if cfg.kind == "pgd":
        return pgd(x, y, model, cfg, seeds=seeds)
    if cfg.kind == "apgd":
        return apgd(x, y, model, cfg, seeds=seeds)
    return di2fgsm(x, y, model, cfg, seeds=seeds)
