"""Binary network weight files and binary PPM images.

Weight file layout (little endian)::

    b"SESR" | u32 version=1 | u32 layer_count | u32 scale
    per layer: u8 tag | 6 x u32 dims | float32 payload

``dims`` is ``(c_out, c_in, kh, kw, stride, padding)`` for convolutions, with
``padding = 0xFFFFFFFF`` meaning "same". Transposed convolutions keep their
output padding in the high 16 bits of the stride word. Tag bit 0x80 marks a
trailing bias vector. Residual tags store their label, NUL padded, in the
24 dims bytes. Linear blocks store ``(f_o, f_i, k, k, p, short_residual)``
followed by the ``A`` then ``B`` weights.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import network as N
from .errors import FormatError, UnsupportedFormatError
from .network import NetworkSpec
from .tensor import ConvSpec

MAGIC = b"SESR"
VERSION = 1
HEADER = struct.Struct("<4sIII")
LAYER_HEADER = struct.Struct("<B6I")
SAME = 0xFFFFFFFF
BIAS_FLAG = 0x80

TAGS = {
    "conv": 0,
    "convT": 1,
    "relu": 2,
    "prelu": 3,
    "d2s": 4,
    "res_begin": 5,
    "res_end": 6,
    "linear_block": 7,
    "avgpool2": 8,
    "gap": 9,
    "dense": 10,
    "flatten": 11,
}
_TAG_NAMES = {v: k for k, v in TAGS.items()}


def _conv_dims(s: ConvSpec, transpose: bool) -> tuple:
    pad = SAME if s.padding == "same" else int(s.padding)
    stride = s.stride | (s.output_padding << 16) if transpose else s.stride
    return (s.c_out, s.c_in, s.kh, s.kw, stride, pad)


def _label_dims(label: str) -> tuple:
    raw = label.encode("ascii")
    if len(raw) > 24:
        raise FormatError(f"residual label {label!r} longer than 24 bytes")
    return struct.unpack("<6I", raw.ljust(24, b"\0"))


def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def save_weights(path, net: NetworkSpec, weights: N.WeightStore) -> int:
    """Write ``net`` and its weights; returns the number of bytes written."""
    N.check_weights(net, weights)
    chunks = [HEADER.pack(MAGIC, VERSION, len(net.layers), net.scale)]
    for layer, params in zip(net.layers, weights):
        payload = b""
        if isinstance(layer, N.Conv):  # includes ConvTranspose
            transpose = isinstance(layer, N.ConvTranspose)
            tag = TAGS["convT" if transpose else "conv"]
            dims = _conv_dims(layer.spec, transpose)
            payload = _f32(params["w"])
            if layer.spec.has_bias:
                tag |= BIAS_FLAG
                payload += _f32(params["b"])
        elif isinstance(layer, N.LinearBlock):
            b = layer.block
            tag, dims = TAGS["linear_block"], (b.f_o, b.f_i, b.k, b.k, b.p, int(b.short_residual))
            payload = _f32(params["A"]) + _f32(params["B"])
        elif isinstance(layer, N.Activation):
            tag, dims = TAGS[layer.kind], (0,) * 6
            if layer.kind == "prelu":
                payload = _f32(params["slope"])
        elif isinstance(layer, N.DepthToSpace):
            tag, dims = TAGS["d2s"], (0, 0, 0, 0, layer.block, 0)
        elif isinstance(layer, (N.ResidualBegin, N.ResidualEnd)):
            tag, dims = TAGS[layer.tag], _label_dims(layer.label)
        elif isinstance(layer, N.Dense):
            tag, dims = TAGS["dense"], (layer.n_out, layer.n_in, 1, 1, 1, 0)
            payload = _f32(params["w"])
            if layer.has_bias:
                tag |= BIAS_FLAG
                payload += _f32(params["b"])
        elif isinstance(layer, (N.AvgPool2, N.GlobalAvgPool, N.Flatten)):
            tag, dims = TAGS[layer.tag], (0,) * 6
        else:
            raise FormatError(f"layer type {layer.tag!r} has no file encoding")
        chunks.append(LAYER_HEADER.pack(tag, *dims) + payload)
    data = b"".join(chunks)
    Path(path).write_bytes(data)
    return len(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated file while reading {what} ({n} bytes needed)", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def floats(self, shape, what: str) -> np.ndarray:
        count = int(np.prod(shape))
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)


def load_weights(path):
    """Inverse of :func:`save_weights`; returns ``(NetworkSpec, WeightStore)``."""
    r = _Reader(Path(path).read_bytes())
    magic, version, count, scale = HEADER.unpack(r.take(HEADER.size, "header"))
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    layers, weights = [], []
    for i in range(count):
        start = r.pos
        tag, *dims = LAYER_HEADER.unpack(r.take(LAYER_HEADER.size, f"layer {i} header"))
        has_bias = bool(tag & BIAS_FLAG)
        kind = _TAG_NAMES.get(tag & ~BIAS_FLAG)
        params: dict = {}
        try:
            if kind in ("conv", "convT"):
                c_out, c_in, kh, kw, stride, pad = dims
                op = stride >> 16 if kind == "convT" else 0
                spec = ConvSpec(
                    kh, kw, c_in, c_out,
                    stride=stride & 0xFFFF,
                    padding="same" if pad == SAME else pad,
                    has_bias=has_bias,
                    output_padding=op,
                )
                layers.append(N.ConvTranspose(spec) if kind == "convT" else N.Conv(spec))
                params["w"] = r.floats(spec.weight_shape, f"layer {i} weights")
                if has_bias:
                    params["b"] = r.floats((c_out,), f"layer {i} bias")
            elif kind == "linear_block":
                f_o, f_i, k, _, p, res = dims
                block = N.LinearBlockSpec(k, f_i, f_o, p, short_residual=bool(res))
                layers.append(N.LinearBlock(block))
                params["A"] = r.floats(block.expand_spec.weight_shape, f"layer {i} A")
                params["B"] = r.floats(block.project_spec.weight_shape, f"layer {i} B")
            elif kind in ("relu", "prelu"):
                layers.append(N.Activation(kind))
                if kind == "prelu":
                    params["slope"] = r.floats((1,), f"layer {i} slope")
            elif kind == "d2s":
                layers.append(N.DepthToSpace(dims[4]))
            elif kind in ("res_begin", "res_end"):
                label = struct.pack("<6I", *dims).rstrip(b"\0").decode("ascii")
                layers.append(N.ResidualBegin(label) if kind == "res_begin" else N.ResidualEnd(label))
            elif kind == "dense":
                n_out, n_in = dims[:2]
                layers.append(N.Dense(n_in, n_out, has_bias))
                params["w"] = r.floats((n_out, n_in), f"layer {i} weights")
                if has_bias:
                    params["b"] = r.floats((n_out,), f"layer {i} bias")
            elif kind == "avgpool2":
                layers.append(N.AvgPool2())
            elif kind == "gap":
                layers.append(N.GlobalAvgPool())
            elif kind == "flatten":
                layers.append(N.Flatten())
            else:
                raise FormatError(f"unknown layer tag {tag}", start)
        except FormatError:
            raise
        except (ValueError, UnicodeDecodeError) as exc:
            raise FormatError(f"invalid layer {i} ({kind}): {exc}", start) from exc
        weights.append(params)
    if r.pos != len(r.data):
        raise FormatError(f"{len(r.data) - r.pos} trailing bytes", r.pos)
    try:
        net = NetworkSpec(Path(path).stem, tuple(layers), scale)
    except ValueError as exc:
        raise FormatError(f"invalid network structure: {exc}", HEADER.size) from exc
    return net, weights


# --- PPM ----------------------------------------------------------------------


def _ppm_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PPM header", pos)
        tokens.append(data[start:pos])
    return tokens, pos + 1  # exactly one whitespace byte precedes the raster


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 image as a (1, 3, h, w) float32 array in [0, 1]."""
    data = Path(path).read_bytes()
    if data[:2] != b"P6":
        raise UnsupportedFormatError(f"{path}: only binary P6 PPM is supported")
    tokens, pos = _ppm_tokens(data, 4)
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PPM header", 2) from exc
    if maxval != 255:
        raise UnsupportedFormatError(f"{path}: maxval {maxval} unsupported (need 255)")
    n = w * h * 3
    if len(data) - pos < n:
        raise FormatError(f"{path}: truncated raster", len(data))
    raster = np.frombuffer(data, dtype=np.uint8, count=n, offset=pos).reshape(h, w, 3)
    return (raster.transpose(2, 0, 1)[None].astype(np.float32) / 255.0).astype(np.float32)


def to_uint8(image: np.ndarray) -> np.ndarray:
    v = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(v + 0.5).astype(np.uint8)  # non-negative, so half-up == half-away-from-zero


def write_ppm(path, image: np.ndarray) -> None:
    """Write a (3, h, w) or (1, 3, h, w) image in [0, 1] as P6."""
    img = np.asarray(image)
    if img.ndim == 4:
        if img.shape[0] != 1:
            raise FormatError("write_ppm takes a single image")
        img = img[0]
    if img.ndim != 3 or img.shape[0] != 3:
        raise FormatError(f"expected a 3-channel image, got shape {img.shape}")
    _, h, w = img.shape
    raster = to_uint8(img).transpose(1, 2, 0)
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + raster.tobytes())
