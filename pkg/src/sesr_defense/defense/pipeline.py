"""JPEG -> wavelet denoising -> x2 upscaling, in that fixed order."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError
from .jpeg import jpeg_round_trip, quality_scale
from .resample import interpolate_upscale
from .wavelet import WAVELETS, max_levels, wavelet_denoise

SR_UPSCALERS = ("sesr_m2", "sesr_m3", "sesr_m5", "sesr_xl", "fsrcnn")
UPSCALERS = SR_UPSCALERS + ("nearest", "bicubic", "none")


@dataclass(frozen=True)
class DefenseConfig:
    jpeg_enabled: bool = True
    jpeg_quality: int = 75
    wavelet_enabled: bool = True
    wavelet: str = "db2"
    levels: int = 2
    upscaler: str = "sesr_m2"
    weight_path: str | None = None

    def __post_init__(self):
        quality_scale(self.jpeg_quality)
        if self.wavelet not in WAVELETS:
            raise ConfigurationError(f"unsupported wavelet {self.wavelet!r}")
        if self.levels < 1:
            raise ConfigurationError("levels must be >= 1")
        if self.upscaler not in UPSCALERS:
            raise ConfigurationError(f"unknown upscaler {self.upscaler!r}")

    @classmethod
    def disabled(cls) -> "DefenseConfig":
        return cls(jpeg_enabled=False, wavelet_enabled=False, upscaler="none")


@lru_cache(maxsize=8)
def _load_sr(path: str):
    from ..io import load_weights

    return load_weights(path)


def resolve_sr_model(cfg: DefenseConfig, sr_model=None):
    if sr_model is not None:
        return sr_model
    if cfg.weight_path is None:
        raise ConfigurationError(f"upscaler {cfg.upscaler!r} needs SR weights (weight_path)")
    if not Path(cfg.weight_path).is_file():
        raise ConfigurationError(f"SR weight file not found: {cfg.weight_path}")
    return _load_sr(str(cfg.weight_path))


def defend(image: np.ndarray, cfg: DefenseConfig, sr_model=None) -> np.ndarray:
    """Preprocess (n, 3, h, w) images in [0, 1].

    ``sr_model`` is a ``(NetworkSpec, WeightStore)`` pair; when omitted for an
    SR upscaler, weights are loaded from ``cfg.weight_path``.
    """
    from ..models import sr_upscale

    x = np.asarray(image, dtype=np.float32)
    if cfg.jpeg_enabled:
        x = jpeg_round_trip(x, cfg.jpeg_quality)
    if cfg.wavelet_enabled:
        if cfg.levels > max_levels(x.shape[2], x.shape[3]):
            raise ConfigurationError(f"{cfg.levels} wavelet levels too deep for {x.shape[2]}x{x.shape[3]}")
        x = wavelet_denoise(x, cfg.wavelet, cfg.levels)
    if cfg.upscaler in SR_UPSCALERS:
        net, weights = resolve_sr_model(cfg, sr_model)
        x = sr_upscale(net, weights, x)
    elif cfg.upscaler != "none":
        x = interpolate_upscale(x, cfg.upscaler, 2)
    return x
