"""Orthonormal 2-D wavelet pyramids and BayesShrink denoising."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pywt

from ..errors import ConfigurationError, DimensionError

WAVELETS = ("haar", "db2")
MAD_SCALE = 0.6745


@dataclass
class Pyramid:
    """``details[j-1] = (LH_j, HL_j, HH_j)``; level 1 is the finest."""

    ll: np.ndarray
    details: list
    wavelet: str
    shape: tuple  # original plane shape, before symmetric padding

    @property
    def levels(self) -> int:
        return len(self.details)


def max_levels(h: int, w: int) -> int:
    return int(math.floor(math.log2(min(h, w)))) - 2


def _check_levels(h: int, w: int, levels: int) -> None:
    if levels < 1 or levels > max_levels(h, w):
        raise ConfigurationError(f"{levels} levels too deep for a {h}x{w} plane (max {max_levels(h, w)})")


def dwt2(plane: np.ndarray, wavelet: str = "db2", levels: int = 2) -> Pyramid:
    if wavelet not in WAVELETS:
        raise ConfigurationError(f"unsupported wavelet {wavelet!r}")
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise DimensionError(f"expected a 2-D plane, got {plane.shape}", axis="ndim")
    h, w = plane.shape
    _check_levels(h, w, levels)
    m = 2**levels
    H, W = -(-h // m) * m, -(-w // m) * m
    if (H, W) != (h, w):
        plane = np.pad(plane, ((0, H - h), (0, W - w)), mode="symmetric")
    coeffs = pywt.wavedec2(plane, wavelet, mode="periodization", level=levels)
    details = [tuple(c) for c in reversed(coeffs[1:])]
    return Pyramid(coeffs[0], details, wavelet, (h, w))


def idwt2(pyr: Pyramid) -> np.ndarray:
    coeffs = [pyr.ll] + [tuple(d) for d in reversed(pyr.details)]
    plane = pywt.waverec2(coeffs, pyr.wavelet, mode="periodization")
    h, w = pyr.shape
    return plane[:h, :w]


def estimate_noise_sigma(hh1: np.ndarray) -> float:
    """Robust (MAD) noise estimate from the finest diagonal subband."""
    hh1 = np.asarray(hh1)
    if hh1.size == 0:
        raise DimensionError("empty subband", axis="size")
    return float(np.median(np.abs(hh1)) / MAD_SCALE)


def soft_threshold(c, t: float):
    c = np.asarray(c, dtype=np.float64)
    return np.sign(c) * np.maximum(np.abs(c) - t, 0.0)


def bayes_shrink_threshold(subband: np.ndarray, sigma_n: float) -> float:
    if sigma_n == 0:
        return 0.0
    sigma_x = math.sqrt(max(float(np.var(subband)) - sigma_n**2, 0.0))
    if sigma_x == 0:
        return float(np.max(np.abs(subband)))
    return sigma_n**2 / sigma_x


def denoise_plane(plane: np.ndarray, wavelet: str = "db2", levels: int = 2) -> np.ndarray:
    pyr = dwt2(plane, wavelet, levels)
    sigma_n = estimate_noise_sigma(pyr.details[0][2])
    pyr.details = [
        tuple(soft_threshold(band, bayes_shrink_threshold(band, sigma_n)) for band in level)
        for level in pyr.details
    ]
    return idwt2(pyr)


def wavelet_denoise(image: np.ndarray, wavelet: str = "db2", levels: int = 2) -> np.ndarray:
    """BayesShrink each RGB channel of (n, 3, h, w) images independently."""
    if image.ndim != 4:
        raise DimensionError(f"expected (n, c, h, w), got {image.shape}", axis="ndim")
    out = np.empty(image.shape, dtype=np.float64)
    for i in range(image.shape[0]):
        for c in range(image.shape[1]):
            out[i, c] = denoise_plane(image[i, c], wavelet, levels)
    return np.clip(out, 0.0, 1.0).astype(np.float32)
