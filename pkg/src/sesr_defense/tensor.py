"""Dense NCHW tensor kernels with explicit backward passes.

Every array flowing through the package is a 4-D ``(n, c, h, w)`` numpy
array stored as float32. Convolution inner products are accumulated in
float64 and rounded on store. Passing float64 inputs keeps float64 storage,
which the gradient checks rely on.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, DimensionError, StateError, UnsupportedConfigurationError

Padding = Union[str, int]

# Upper bound for one im2col chunk (bytes of float64 patch data).
_CHUNK_BYTES = 64 * 1024 * 1024


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a (transposed) convolution.

    Weights are laid out ``(c_out, c_in, kh, kw)`` for both the forward and
    the transposed convolution.
    """

    kh: int
    kw: int
    c_in: int
    c_out: int
    stride: int = 1
    padding: Padding = "same"
    has_bias: bool = False
    output_padding: int = 0

    def __post_init__(self):
        if min(self.kh, self.kw, self.c_in, self.c_out, self.stride) <= 0:
            raise ConfigurationError(f"non-positive extent in {self}")
        if self.padding == "same":
            if self.kh % 2 == 0 or self.kw % 2 == 0:
                raise UnsupportedConfigurationError("'same' padding requires odd kernel extents")
        elif not isinstance(self.padding, (int, np.integer)) or self.padding < 0:
            raise ConfigurationError(f"bad padding {self.padding!r}")

    @classmethod
    def square(cls, k: int, c_in: int, c_out: int, **kw) -> "ConvSpec":
        return cls(k, k, c_in, c_out, **kw)

    @property
    def pad(self) -> tuple[int, int]:
        if self.padding == "same":
            return (self.kh - 1) // 2, (self.kw - 1) // 2
        return int(self.padding), int(self.padding)

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.c_out, self.c_in, self.kh, self.kw)

    @property
    def n_weights(self) -> int:
        return self.c_out * self.c_in * self.kh * self.kw

    def conv_output_hw(self, h: int, w: int) -> tuple[int, int]:
        ph, pw = self.pad
        return (h + 2 * ph - self.kh) // self.stride + 1, (w + 2 * pw - self.kw) // self.stride + 1

    def transpose_output_hw(self, h: int, w: int) -> tuple[int, int]:
        ph, pw = self.pad
        s, op = self.stride, self.output_padding
        return (h - 1) * s - 2 * ph + self.kh + op, (w - 1) * s - 2 * pw + self.kw + op


def _store_dtype(x: np.ndarray):
    return np.float64 if x.dtype == np.float64 else np.float32


def _check4(x: np.ndarray, name: str = "x") -> None:
    if x.ndim != 4:
        raise DimensionError(f"{name} must be 4-D (n, c, h, w), got shape {x.shape}", axis="ndim")


def _weights(spec: ConvSpec, weights) -> np.ndarray:
    w = np.asarray(weights)
    if w.size != spec.n_weights:
        raise DimensionError(
            f"expected {spec.n_weights} weights for {spec.weight_shape}, got {w.size}", axis="weights"
        )
    return w.reshape(spec.weight_shape).astype(np.float64)


def _rows_per_chunk(bytes_per_row: int) -> int:
    return max(1, _CHUNK_BYTES // max(1, bytes_per_row))


def _correlate(xp: np.ndarray, w: np.ndarray, stride: int, oh: int, ow: int) -> np.ndarray:
    """Cross-correlate padded float64 ``xp`` with ``w`` of shape (o, c, kh, kw)."""
    n, c = xp.shape[:2]
    o, _, kh, kw = w.shape
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    out = np.empty((n, o, oh, ow), dtype=np.float64)
    step = _rows_per_chunk(n * c * ow * kh * kw * 8)
    for r0 in range(0, oh, step):
        r1 = min(oh, r0 + step)
        part = np.tensordot(win[:, :, r0:r1], w, axes=([1, 4, 5], [1, 2, 3]))
        out[:, :, r0:r1] = part.transpose(0, 3, 1, 2)
    return out


def _scatter(g: np.ndarray, w: np.ndarray, stride: int, full_h: int, full_w: int) -> np.ndarray:
    """Adjoint of :func:`_correlate`: stamp ``g`` (n, o, oh, ow) through ``w`` (o, c, kh, kw)."""
    n, o, oh, ow = g.shape
    _, c, kh, kw = w.shape
    full = np.zeros((n, c, full_h, full_w), dtype=np.float64)
    step = _rows_per_chunk(n * ow * c * kh * kw * 8)
    for r0 in range(0, oh, step):
        r1 = min(oh, r0 + step)
        cols = np.tensordot(g[:, :, r0:r1], w, axes=([1], [0]))  # n, rows, ow, c, kh, kw
        cols = cols.transpose(0, 3, 4, 5, 1, 2)
        rows = r1 - r0
        for u in range(kh):
            y0 = stride * r0 + u
            for v in range(kw):
                full[:, :, y0:y0 + stride * (rows - 1) + 1:stride, v:v + stride * (ow - 1) + 1:stride] += cols[
                    :, :, u, v
                ]
    return full


def _weight_grad(xp: np.ndarray, g: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    n, o, oh, ow = g.shape
    c = xp.shape[1]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    gw = np.zeros((o, c, kh, kw), dtype=np.float64)
    step = _rows_per_chunk(n * c * ow * kh * kw * 8)
    for r0 in range(0, oh, step):
        r1 = min(oh, r0 + step)
        gw += np.tensordot(g[:, :, r0:r1], win[:, :, r0:r1], axes=([0, 2, 3], [0, 2, 3]))
    return gw


def _pad(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    x = x.astype(np.float64)
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def conv2d(x: np.ndarray, spec: ConvSpec, weights, bias=None) -> np.ndarray:
    """Zero-padded cross-correlation (no kernel flip)."""
    _check4(x)
    if x.shape[1] != spec.c_in:
        raise DimensionError(f"input has {x.shape[1]} channels, conv expects {spec.c_in}", axis="channel")
    w = _weights(spec, weights)
    oh, ow = spec.conv_output_hw(x.shape[2], x.shape[3])
    if oh <= 0 or ow <= 0:
        raise DimensionError(f"input {x.shape[2:]} smaller than kernel {spec.kh}x{spec.kw}", axis="spatial")
    ph, pw = spec.pad
    out = _correlate(_pad(x, ph, pw), w, spec.stride, oh, ow)
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64).reshape(1, -1, 1, 1)
    return out.astype(_store_dtype(x))


def conv2d_backward(x: np.ndarray, spec: ConvSpec, weights, grad_out: np.ndarray):
    """Return ``(grad_x, grad_w, grad_b)`` for :func:`conv2d`; ``grad_b`` is None without bias."""
    _check4(x)
    n, _, h, w_ = x.shape
    oh, ow = spec.conv_output_hw(h, w_)
    if grad_out.shape != (n, spec.c_out, oh, ow):
        raise StateError(f"grad shape {grad_out.shape} does not match conv output {(n, spec.c_out, oh, ow)}")
    w = _weights(spec, weights)
    ph, pw = spec.pad
    g = grad_out.astype(np.float64)
    full = _scatter(g, w, spec.stride, h + 2 * ph, w_ + 2 * pw)
    gx = full[:, :, ph:ph + h, pw:pw + w_]
    gw = _weight_grad(_pad(x, ph, pw), g, spec.kh, spec.kw, spec.stride)
    gb = g.sum(axis=(0, 2, 3)) if spec.has_bias else None
    dt = _store_dtype(x)
    return gx.astype(dt), gw.astype(dt), None if gb is None else gb.astype(dt)


def conv2d_transpose(x: np.ndarray, spec: ConvSpec, weights, bias=None) -> np.ndarray:
    """Transposed convolution; adjoint of :func:`conv2d` for the matching geometry.

    ``spec.c_in`` is the channel count of ``x``. With weights ``W`` of shape
    ``(c_out, c_in, kh, kw)`` this equals the input-gradient of a forward
    convolution (c_out -> c_in) whose kernel is ``W.transpose(1, 0, 2, 3)``.
    """
    _check4(x)
    if x.shape[1] != spec.c_in:
        raise DimensionError(f"input has {x.shape[1]} channels, expected {spec.c_in}", axis="channel")
    n, _, h, w_ = x.shape
    H, W = spec.transpose_output_hw(h, w_)
    if H <= 0 or W <= 0:
        raise ConfigurationError(f"transposed conv output size {H}x{W} is not positive")
    wt = _weights(spec, weights).transpose(1, 0, 2, 3)
    ph, pw = spec.pad
    full_h, full_w = (h - 1) * spec.stride + spec.kh, (w_ - 1) * spec.stride + spec.kw
    full = _scatter(x.astype(np.float64), wt, spec.stride, max(full_h, ph + H), max(full_w, pw + W))
    out = full[:, :, ph:ph + H, pw:pw + W]
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64).reshape(1, -1, 1, 1)
    return out.astype(_store_dtype(x))


def conv2d_transpose_backward(x: np.ndarray, spec: ConvSpec, weights, grad_out: np.ndarray):
    _check4(x)
    n, _, h, w_ = x.shape
    H, W = spec.transpose_output_hw(h, w_)
    if grad_out.shape != (n, spec.c_out, H, W):
        raise StateError(f"grad shape {grad_out.shape} does not match output {(n, spec.c_out, H, W)}")
    wt = _weights(spec, weights).transpose(1, 0, 2, 3)
    ph, pw = spec.pad
    full_h, full_w = (h - 1) * spec.stride + spec.kh, (w_ - 1) * spec.stride + spec.kw
    g_full = np.zeros((n, spec.c_out, max(full_h, ph + H), max(full_w, pw + W)))
    g_full[:, :, ph:ph + H, pw:pw + W] = grad_out
    g_full = g_full[:, :, :full_h, :full_w]
    gx = _correlate(g_full, wt, spec.stride, h, w_)
    # (c_in, c_out, kh, kw) -> stored (c_out, c_in, kh, kw) layout
    gw = _weight_grad(g_full, x.astype(np.float64), spec.kh, spec.kw, spec.stride).transpose(1, 0, 2, 3)
    gb = grad_out.astype(np.float64).sum(axis=(0, 2, 3)) if spec.has_bias else None
    dt = _store_dtype(x)
    return gx.astype(dt), gw.astype(dt), None if gb is None else gb.astype(dt)


def depth_to_space(x: np.ndarray, block: int) -> np.ndarray:
    """Pixel shuffle: channel ``(dy*block + dx)*c + ch`` lands at ``(y*block+dy, x*block+dx)``."""
    _check4(x)
    n, C, h, w = x.shape
    if block <= 0 or C % (block * block):
        raise DimensionError(f"{C} channels not divisible by block^2={block * block}", axis="channel")
    c = C // (block * block)
    y = x.reshape(n, block, block, c, h, w).transpose(0, 3, 4, 1, 5, 2)
    return np.ascontiguousarray(y.reshape(n, c, h * block, w * block))


def space_to_depth(x: np.ndarray, block: int) -> np.ndarray:
    _check4(x)
    n, c, H, W = x.shape
    if block <= 0 or H % block or W % block:
        raise DimensionError(f"spatial size {H}x{W} not divisible by {block}", axis="spatial")
    h, w = H // block, W // block
    y = x.reshape(n, c, h, block, w, block).transpose(0, 3, 5, 1, 2, 4)
    return np.ascontiguousarray(y.reshape(n, block * block * c, h, w))


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0).astype(_store_dtype(x))


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    if grad_out.shape != x.shape:
        raise StateError(f"grad shape {grad_out.shape} != input shape {x.shape}")
    return np.where(x > 0, grad_out, 0).astype(_store_dtype(x))


def prelu_forward(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0, x, slope * x).astype(_store_dtype(x))


def prelu_backward(x: np.ndarray, slope: float, grad_out: np.ndarray):
    """Return ``(grad_x, grad_slope)``."""
    if grad_out.shape != x.shape:
        raise StateError(f"grad shape {grad_out.shape} != input shape {x.shape}")
    neg = x < 0
    gx = np.where(neg, slope * grad_out, grad_out)
    gs = float(np.sum(grad_out.astype(np.float64) * x * neg))
    return gx.astype(_store_dtype(x)), gs


def avg_pool2(x: np.ndarray) -> np.ndarray:
    _check4(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"2x2 average pool needs even extents, got {h}x{w}", axis="spatial")
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5), dtype=np.float64).astype(_store_dtype(x))


def avg_pool2_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    if grad_out.shape != (n, c, h // 2, w // 2):
        raise StateError(f"grad shape {grad_out.shape} does not match pooled shape")
    g = np.repeat(np.repeat(grad_out, 2, axis=2), 2, axis=3) * 0.25
    return g.astype(_store_dtype(x))


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """(n, c, h, w) -> (n, c)."""
    _check4(x)
    return x.mean(axis=(2, 3), dtype=np.float64).astype(_store_dtype(x))


def global_avg_pool_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    if grad_out.shape != (n, c):
        raise StateError(f"grad shape {grad_out.shape} != {(n, c)}")
    g = np.broadcast_to(grad_out[:, :, None, None] / (h * w), x.shape)
    return np.array(g, dtype=_store_dtype(x))


def dense(x: np.ndarray, w: np.ndarray, b=None) -> np.ndarray:
    """(n, in) @ (out, in).T + b."""
    if x.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"dense input {x.shape} incompatible with weights {w.shape}", axis="features")
    y = x.astype(np.float64) @ w.astype(np.float64).T
    if b is not None:
        y += b
    return y.astype(_store_dtype(x))


def dense_backward(x: np.ndarray, w: np.ndarray, grad_out: np.ndarray):
    if grad_out.shape != (x.shape[0], w.shape[0]):
        raise StateError(f"grad shape {grad_out.shape} does not match dense output")
    g = grad_out.astype(np.float64)
    dt = _store_dtype(x)
    gx = g @ w.astype(np.float64)
    gw = g.T @ x.astype(np.float64)
    return gx.astype(dt), gw.astype(dt), g.sum(axis=0).astype(dt)
