"""Separable image resampling (nearest, bicubic) on (n, c, h, w) arrays."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, DimensionError


def cubic_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    x = np.abs(x)
    x2, x3 = x * x, x * x * x
    return np.where(
        x <= 1,
        (a + 2) * x3 - (a + 3) * x2 + 1,
        np.where(x < 2, a * x3 - 5 * a * x2 + 8 * a * x - 4 * a, 0.0),
    )


def resize_matrix(n_in: int, n_out: int, antialias: bool = True) -> np.ndarray:
    """(n_out, n_in) bicubic interpolation matrix with edge clamping.

    Pixel centres are aligned (half-pixel convention). When shrinking and
    ``antialias`` is set, the kernel is stretched by the shrink factor.
    """
    scale = n_out / n_in
    kscale = min(scale, 1.0) if antialias else 1.0
    support = 2.0 / kscale
    centres = (np.arange(n_out) + 0.5) / scale - 0.5
    M = np.zeros((n_out, n_in))
    for j, x in enumerate(centres):
        taps = np.arange(int(np.floor(x - support)), int(np.ceil(x + support)) + 1)
        wts = cubic_kernel((x - taps) * kscale)
        wts /= wts.sum()
        np.add.at(M[j], np.clip(taps, 0, n_in - 1), wts)
    return M


def _check(image: np.ndarray) -> None:
    if image.ndim != 4:
        raise DimensionError(f"expected (n, c, h, w), got {image.shape}", axis="ndim")


def resize_bicubic(image: np.ndarray, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    _check(image)
    Mh = resize_matrix(image.shape[2], out_h, antialias)
    Mw = resize_matrix(image.shape[3], out_w, antialias)
    out = np.einsum("ij,ncjk,lk->ncil", Mh, image.astype(np.float64), Mw, optimize=True)
    return out.astype(np.float32)


def nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    return (np.arange(n_out) * n_in) // n_out


def resize_nearest(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    _check(image)
    ih = nearest_indices(image.shape[2], out_h)
    iw = nearest_indices(image.shape[3], out_w)
    return image[:, :, ih][:, :, :, iw]


def interpolate_upscale(image: np.ndarray, method: str = "bicubic", scale: int = 2) -> np.ndarray:
    _check(image)
    h, w = image.shape[2] * scale, image.shape[3] * scale
    if method == "nearest":
        return resize_nearest(image, h, w)
    if method == "bicubic":
        return np.clip(resize_bicubic(image, h, w), 0.0, 1.0)
    raise ConfigurationError(f"unknown interpolation {method!r}")


def bicubic_downscale(image: np.ndarray, factor: int = 2) -> np.ndarray:
    """Antialiased bicubic shrink used to synthesise low-resolution inputs."""
    _check(image)
    h, w = image.shape[2] // factor, image.shape[3] // factor
    return np.clip(resize_bicubic(image, h, w, antialias=True), 0.0, 1.0)
