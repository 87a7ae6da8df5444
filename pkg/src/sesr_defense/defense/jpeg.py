"""Pixel-exact JPEG round trip (baseline DCT quantisation, 4:4:4, no entropy coding)."""
from __future__ import annotations

import numpy as np
from scipy.fft import dctn, idctn

from ..errors import ConfigurationError, DimensionError

LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)

CHROMA_TABLE = np.full((8, 8), 99.0)
CHROMA_TABLE[:4, :4] = [
    [17, 18, 24, 47],
    [18, 21, 26, 66],
    [24, 26, 56, 99],
    [47, 66, 99, 99],
]

# ITU-R BT.601 full range, as used by JFIF
_RGB2YCC = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YCC2RGB = np.array(
    [
        [1.0, 0.0, 1.402],
        [1.0, -0.344136, -0.714136],
        [1.0, 1.772, 0.0],
    ]
)


def quality_scale(quality: int) -> int:
    if not 1 <= quality <= 100:
        raise ConfigurationError(f"JPEG quality must be in [1, 100], got {quality}")
    return 5000 // quality if quality < 50 else 200 - 2 * quality


def quant_table(base: np.ndarray, quality: int) -> np.ndarray:
    """IJG quality scaling of a base table."""
    scale = quality_scale(quality)
    return np.clip(np.floor(base * scale / 100.0 + 0.5), 1, 255)


def rgb_to_ycbcr(rgb255: np.ndarray) -> np.ndarray:
    """(..., 3, h, w) on the 0..255 scale."""
    ycc = np.einsum("ij,...jhw->...ihw", _RGB2YCC, rgb255)
    ycc[..., 1:, :, :] += 128.0
    return ycc


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    shifted = ycc.copy()
    shifted[..., 1:, :, :] -= 128.0
    return np.einsum("ij,...jhw->...ihw", _YCC2RGB, shifted)


def _blocks(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)


def _unblocks(blocks: np.ndarray) -> np.ndarray:
    bh, bw = blocks.shape[:2]
    return blocks.transpose(0, 2, 1, 3).reshape(bh * 8, bw * 8)


def quantize_plane(plane: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Quantised DCT coefficients of a level-shifted plane with sides divisible by 8."""
    coeffs = dctn(_blocks(plane - 128.0), axes=(-2, -1), norm="ortho")
    return np.round(coeffs / table)


def dequantize_plane(q: np.ndarray, table: np.ndarray) -> np.ndarray:
    return _unblocks(idctn(q * table, axes=(-2, -1), norm="ortho")) + 128.0


def jpeg_round_trip(image: np.ndarray, quality: int = 75) -> np.ndarray:
    """Compress and decompress (n, 3, h, w) images in [0, 1]."""
    tables = (quant_table(LUMA_TABLE, quality), quant_table(CHROMA_TABLE, quality))
    if image.ndim != 4 or image.shape[1] != 3:
        raise DimensionError(f"expected (n, 3, h, w) image, got {image.shape}", axis="channel")
    n, _, h, w = image.shape
    H, W = -(-h // 8) * 8, -(-w // 8) * 8
    padded = np.pad(image.astype(np.float64) * 255.0, ((0, 0), (0, 0), (0, H - h), (0, W - w)), mode="edge")
    ycc = rgb_to_ycbcr(padded)
    out = np.empty_like(ycc)
    for i in range(n):
        for ch in range(3):
            table = tables[0] if ch == 0 else tables[1]
            out[i, ch] = dequantize_plane(quantize_plane(ycc[i, ch], table), table)
    rgb = ycbcr_to_rgb(out)[:, :, :h, :w] / 255.0
    return np.clip(rgb, 0.0, 1.0).astype(np.float32)
