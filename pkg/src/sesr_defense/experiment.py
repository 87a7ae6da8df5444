"""Gray-box robustness evaluation: attack the bare classifier once, then defend."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import attacks as A
from .data import load_labeled_dir
from .defense import DefenseConfig, defend
from .defense.pipeline import SR_UPSCALERS
from .errors import ConfigurationError
from .io import load_weights, save_weights, write_ppm
from .models import build_net
from .network import Dense, count_macs, count_params
from .report import RobustnessReport, Row, method_title

log = logging.getLogger(__name__)

# SR cost columns use the table's 299x299 convention, not the desk image size.
COST_INPUT = (299, 299)


@dataclass
class ExperimentConfig:
    classifier_path: str | None = None
    dataset_dir: str | None = None
    output_dir: str | None = None
    attack: A.AttackConfig = field(default_factory=A.AttackConfig)
    attacks: tuple = A.KINDS  # kinds; each reuses the other ``attack`` fields
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    upscalers: tuple = ("nearest", "sesr_m2")
    sr_weights: dict = field(default_factory=dict)  # upscaler -> weight file
    jpeg_ablation: bool = False  # also evaluate every upscaler with JPEG off
    subset: int = 500
    seed: int = 0

    def __post_init__(self):
        for kind in self.attacks:
            if kind not in A.KINDS:
                raise ConfigurationError(f"unknown attack {kind!r}")
        for u in self.upscalers:
            if u == "none" or u not in METHOD_UPSCALERS:
                raise ConfigurationError(f"unknown upscaler {u!r}")
        if self.subset < 1:
            raise ConfigurationError("subset must be >= 1")

    def check_paths(self) -> None:
        for what, p in (("classifier", self.classifier_path), ("dataset", self.dataset_dir)):
            if p is not None and not Path(p).exists():
                raise FileNotFoundError(f"{what} path does not exist: {p}")
        for u, p in self.sr_weights.items():
            if not Path(p).is_file():
                raise FileNotFoundError(f"SR weights for {u} not found: {p}")


METHOD_UPSCALERS = SR_UPSCALERS + ("nearest", "bicubic")


def load_classifier(path) -> A.Classifier:
    net, weights = load_weights(path)
    last = net.layers[-1]
    if not isinstance(last, Dense):
        raise ConfigurationError(f"{path}: last layer is {last.tag}, not a dense classifier head")
    return A.Classifier(net, weights, last.n_out)


def save_classifier(path, model: A.Classifier) -> int:
    return save_weights(path, model.net, model.weights)


def filter_clean(model: A.Classifier, images, labels, subset: int):
    """Indices of the first ``subset`` correctly classified images."""
    idx = A.correctly_classified(model, images, labels)[:subset]
    if len(idx) == 0:
        raise ConfigurationError("no correctly classified clean images to evaluate")
    return idx


def _accuracy(model: A.Classifier, images, labels) -> float:
    pred, _ = A.classify(model, images)
    return 100.0 * float(np.mean(pred == labels))


def eval_robustness(
    cfg: ExperimentConfig,
    classifier: A.Classifier | None = None,
    images: np.ndarray | None = None,
    labels: np.ndarray | None = None,
    sr_models: dict | None = None,
) -> RobustnessReport:
    """One row for the undefended classifier plus one per upscaler (and JPEG mode).

    In-memory ``classifier``/``images``/``sr_models`` override the paths in
    ``cfg``. Adversarial images are generated once per attack against the
    bare classifier and shared by every defense row.
    """
    cfg.check_paths()
    if classifier is None:
        if cfg.classifier_path is None:
            raise ConfigurationError("no classifier given")
        classifier = load_classifier(cfg.classifier_path)
    if images is None:
        if cfg.dataset_dir is None:
            raise ConfigurationError("no dataset given")
        images, labels, _, _ = load_labeled_dir(cfg.dataset_dir)
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    sr_models = dict(sr_models or {})
    for u in cfg.upscalers:
        if u in SR_UPSCALERS and u not in sr_models:
            if u not in cfg.sr_weights:
                raise ConfigurationError(f"upscaler {u!r} needs SR weights")
            sr_models[u] = load_weights(cfg.sr_weights[u])

    idx = filter_clean(classifier, images, labels, cfg.subset)
    x, y = images[idx], labels[idx]
    seeds = [A.image_seed(cfg.seed, int(i)) for i in idx]
    log.info("evaluating %d clean-correct images", len(idx))
    enlarged = A.upscaled_variant(classifier)

    adversarial = {}
    for kind in cfg.attacks:
        acfg = replace(cfg.attack, kind=kind, seed=cfg.seed)
        adversarial[kind] = A.run_attack(x, y, classifier, acfg, seeds=seeds)
        if cfg.output_dir is not None:
            _write_adversarial(Path(cfg.output_dir) / "adversarial" / kind, adversarial[kind], idx)

    name = classifier.net.name
    report = RobustnessReport(list(cfg.attacks))
    report.add(Row(name, method_title("none"), None, None,
                   {k: _accuracy(classifier, xa, y) for k, xa in adversarial.items()}))
    modes = (True, False) if cfg.jpeg_ablation else (cfg.defense.jpeg_enabled,)
    for jpeg in modes:
        for u in cfg.upscalers:
            dcfg = replace(cfg.defense, upscaler=u, jpeg_enabled=jpeg)
            acc = {k: _accuracy(enlarged, defend(xa, dcfg, sr_models.get(u)), y) for k, xa in adversarial.items()}
            params, macs = _cost(u, sr_models.get(u))
            report.add(Row(name, method_title(u, jpeg), params, macs, acc))
    return report


def _cost(upscaler: str, sr_model):
    if upscaler not in SR_UPSCALERS:
        return None, None
    net = sr_model[0] if sr_model is not None else build_net(upscaler)
    return count_params(net), count_macs(net, *COST_INPUT)


def _write_adversarial(directory: Path, images: np.ndarray, idx) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for img, i in zip(images, idx):
        write_ppm(directory / f"img{int(i):05d}.ppm", img)
