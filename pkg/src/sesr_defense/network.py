"""Layer descriptors, network specs and a forward/backward executor.

A :class:`NetworkSpec` is an ordered tuple of layer descriptors. Its
parameters live separately in a ``WeightStore``: a list with one
``{name: array}`` dict per layer (empty for parameter-free layers).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

from . import tensor as T
from .errors import (
    ConfigurationError,
    DimensionError,
    InvalidResidualError,
    StateError,
    StructuralError,
    UnsupportedConfigurationError,
)
from .tensor import ConvSpec

WeightStore = list  # list[dict[str, np.ndarray]]
Shape = tuple  # (n, c, h, w) or (n, features)


@dataclass(frozen=True)
class LinearBlockSpec:
    """k x k conv (f_i -> p) followed by a 1 x 1 conv (p -> f_o), no activation inside."""

    k: int
    f_i: int
    f_o: int
    p: int
    short_residual: bool = False

    def __post_init__(self):
        if self.k <= 0 or self.k % 2 == 0:
            raise UnsupportedConfigurationError(f"linear block needs an odd kernel, got k={self.k}")
        if min(self.f_i, self.f_o, self.p) <= 0:
            raise ConfigurationError("channel counts must be positive")
        if self.p < max(self.f_i, self.f_o):
            raise ConfigurationError(f"expansion p={self.p} smaller than max(f_i, f_o)")
        if self.short_residual and self.f_i != self.f_o:
            raise InvalidResidualError("short residual requires f_i == f_o")

    @property
    def expand_spec(self) -> ConvSpec:
        return ConvSpec(self.k, self.k, self.f_i, self.p)

    @property
    def project_spec(self) -> ConvSpec:
        return ConvSpec(1, 1, self.p, self.f_o)

    @property
    def collapsed_spec(self) -> ConvSpec:
        return ConvSpec(self.k, self.k, self.f_i, self.f_o)


def _xavier(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Layer:
    tag: ClassVar[str] = "?"

    def param_shapes(self) -> dict:
        return {}

    def init_params(self, rng: np.random.Generator) -> dict:
        return {}

    def output_shape(self, shape: Shape) -> Shape:
        return shape

    def macs(self, in_shape: Shape) -> int:
        return 0

    def forward(self, params: dict, x: np.ndarray):
        """Return ``(y, ctx)``; ``ctx`` is whatever :meth:`backward` needs besides ``x``."""
        raise NotImplementedError

    def backward(self, params: dict, x: np.ndarray, ctx, grad: np.ndarray):
        """Return ``(grad_x, {name: grad_param})``."""
        raise NotImplementedError


def _require_channels(shape: Shape, c: int, what: str) -> None:
    if len(shape) != 4:
        raise DimensionError(f"{what} expects a 4-D input, got {shape}", axis="ndim")
    if shape[1] != c:
        raise DimensionError(f"{what} expects {c} input channels, got {shape[1]}", axis="channel")


@dataclass(frozen=True)
class Conv(Layer):
    spec: ConvSpec
    tag: ClassVar[str] = "conv"

    def param_shapes(self):
        shapes = {"w": self.spec.weight_shape}
        if self.spec.has_bias:
            shapes["b"] = (self.spec.c_out,)
        return shapes

    def init_params(self, rng):
        s = self.spec
        k2 = s.kh * s.kw
        p = {"w": _xavier(rng, s.weight_shape, s.c_in * k2, s.c_out * k2)}
        if s.has_bias:
            p["b"] = np.zeros(s.c_out, dtype=np.float32)
        return p

    def output_shape(self, shape):
        _require_channels(shape, self.spec.c_in, "conv")
        return (shape[0], self.spec.c_out) + self.spec.conv_output_hw(shape[2], shape[3])

    def macs(self, in_shape):
        _, _, h, w = self.output_shape(in_shape)
        s = self.spec
        return s.kh * s.kw * s.c_in * s.c_out * h * w

    def forward(self, params, x):
        return T.conv2d(x, self.spec, params["w"], params.get("b")), None

    def backward(self, params, x, ctx, grad):
        gx, gw, gb = T.conv2d_backward(x, self.spec, params["w"], grad)
        grads = {"w": gw}
        if gb is not None:
            grads["b"] = gb
        return gx, grads


@dataclass(frozen=True)
class ConvTranspose(Conv):
    tag: ClassVar[str] = "convT"

    def output_shape(self, shape):
        _require_channels(shape, self.spec.c_in, "conv_transpose")
        H, W = self.spec.transpose_output_hw(shape[2], shape[3])
        if H <= 0 or W <= 0:
            raise ConfigurationError(f"transposed conv output {H}x{W} is not positive")
        return (shape[0], self.spec.c_out, H, W)

    def forward(self, params, x):
        return T.conv2d_transpose(x, self.spec, params["w"], params.get("b")), None

    def backward(self, params, x, ctx, grad):
        gx, gw, gb = T.conv2d_transpose_backward(x, self.spec, params["w"], grad)
        grads = {"w": gw}
        if gb is not None:
            grads["b"] = gb
        return gx, grads


@dataclass(frozen=True)
class LinearBlock(Layer):
    """Training-time collapsible block (expanded form)."""

    block: LinearBlockSpec
    tag: ClassVar[str] = "linear_block"

    def param_shapes(self):
        b = self.block
        return {"A": b.expand_spec.weight_shape, "B": b.project_spec.weight_shape}

    def init_params(self, rng):
        b = self.block
        k2 = b.k * b.k
        return {
            "A": _xavier(rng, b.expand_spec.weight_shape, b.f_i * k2, b.p * k2),
            "B": _xavier(rng, b.project_spec.weight_shape, b.p, b.f_o),
        }

    def output_shape(self, shape):
        _require_channels(shape, self.block.f_i, "linear block")
        return (shape[0], self.block.f_o, shape[2], shape[3])

    def macs(self, in_shape):
        b = self.block
        hw = in_shape[2] * in_shape[3]
        return (b.k * b.k * b.f_i * b.p + b.p * b.f_o) * hw

    def forward(self, params, x):
        b = self.block
        h = T.conv2d(x, b.expand_spec, params["A"])
        y = T.conv2d(h, b.project_spec, params["B"])
        if b.short_residual:
            y = (y.astype(np.float64) + x).astype(y.dtype)
        return y, h

    def backward(self, params, x, h, grad):
        b = self.block
        gh, gB, _ = T.conv2d_backward(h, b.project_spec, params["B"], grad)
        gx, gA, _ = T.conv2d_backward(x, b.expand_spec, params["A"], gh)
        if b.short_residual:
            gx = gx + grad
        return gx, {"A": gA, "B": gB}


@dataclass(frozen=True)
class Activation(Layer):
    kind: str = "relu"
    init_slope: float = 0.25
    tag: ClassVar[str] = "act"

    def __post_init__(self):
        if self.kind not in ("relu", "prelu"):
            raise ConfigurationError(f"unknown activation {self.kind!r}")

    def param_shapes(self):
        return {"slope": (1,)} if self.kind == "prelu" else {}

    def init_params(self, rng):
        return {"slope": np.array([self.init_slope], dtype=np.float32)} if self.kind == "prelu" else {}

    def forward(self, params, x):
        if self.kind == "relu":
            return T.relu_forward(x), None
        return T.prelu_forward(x, float(params["slope"][0])), None

    def backward(self, params, x, ctx, grad):
        if self.kind == "relu":
            return T.relu_backward(x, grad), {}
        gx, gs = T.prelu_backward(x, float(params["slope"][0]), grad)
        return gx, {"slope": np.array([gs], dtype=gx.dtype)}


@dataclass(frozen=True)
class DepthToSpace(Layer):
    block: int
    tag: ClassVar[str] = "d2s"

    def output_shape(self, shape):
        n, c, h, w = shape
        b2 = self.block * self.block
        if c % b2:
            raise DimensionError(f"{c} channels not divisible by {b2}", axis="channel")
        return (n, c // b2, h * self.block, w * self.block)

    def forward(self, params, x):
        return T.depth_to_space(x, self.block), None

    def backward(self, params, x, ctx, grad):
        if grad.shape != self.output_shape(x.shape):
            raise StateError(f"grad shape {grad.shape} does not match depth_to_space output")
        return T.space_to_depth(grad, self.block), {}


@dataclass(frozen=True)
class ResidualBegin(Layer):
    label: str
    tag: ClassVar[str] = "res_begin"


@dataclass(frozen=True)
class ResidualEnd(Layer):
    """Adds the tensor stashed at the matching begin tag.

    When the stashed tensor has fewer channels, it is tiled along the
    channel axis (the channel-replicated image skip of SESR).
    """

    label: str
    tag: ClassVar[str] = "res_end"


@dataclass(frozen=True)
class AvgPool2(Layer):
    tag: ClassVar[str] = "avgpool2"

    def output_shape(self, shape):
        n, c, h, w = shape
        return (n, c, h // 2, w // 2)

    def forward(self, params, x):
        return T.avg_pool2(x), None

    def backward(self, params, x, ctx, grad):
        return T.avg_pool2_backward(x, grad), {}


@dataclass(frozen=True)
class GlobalAvgPool(Layer):
    tag: ClassVar[str] = "gap"

    def output_shape(self, shape):
        return (shape[0], shape[1])

    def forward(self, params, x):
        return T.global_avg_pool(x), None

    def backward(self, params, x, ctx, grad):
        return T.global_avg_pool_backward(x, grad), {}


@dataclass(frozen=True)
class Flatten(Layer):
    tag: ClassVar[str] = "flatten"

    def output_shape(self, shape):
        return (shape[0], int(np.prod(shape[1:])))

    def forward(self, params, x):
        return x.reshape(x.shape[0], -1), None

    def backward(self, params, x, ctx, grad):
        return grad.reshape(x.shape), {}


@dataclass(frozen=True)
class Dense(Layer):
    n_in: int
    n_out: int
    has_bias: bool = True
    tag: ClassVar[str] = "dense"

    def param_shapes(self):
        shapes = {"w": (self.n_out, self.n_in)}
        if self.has_bias:
            shapes["b"] = (self.n_out,)
        return shapes

    def init_params(self, rng):
        p = {"w": _xavier(rng, (self.n_out, self.n_in), self.n_in, self.n_out)}
        if self.has_bias:
            p["b"] = np.zeros(self.n_out, dtype=np.float32)
        return p

    def output_shape(self, shape):
        if len(shape) != 2 or shape[1] != self.n_in:
            raise DimensionError(f"dense expects (n, {self.n_in}), got {shape}", axis="features")
        return (shape[0], self.n_out)

    def macs(self, in_shape):
        return self.n_in * self.n_out

    def forward(self, params, x):
        return T.dense(x, params["w"], params.get("b")), None

    def backward(self, params, x, ctx, grad):
        gx, gw, gb = T.dense_backward(x, params["w"], grad)
        grads = {"w": gw}
        if self.has_bias:
            grads["b"] = gb
        return gx, grads


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    layers: tuple
    scale: int = 1

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        validate_residuals(self.layers)


def validate_residuals(layers) -> None:
    stack: list[str] = []
    seen: set[str] = set()
    for layer in layers:
        if isinstance(layer, ResidualBegin):
            if layer.label in seen:
                raise StructuralError(f"residual label {layer.label!r} opened twice")
            seen.add(layer.label)
            stack.append(layer.label)
        elif isinstance(layer, ResidualEnd):
            if not stack or stack[-1] != layer.label:
                raise StructuralError(f"residual end {layer.label!r} is not properly nested")
            stack.pop()
    if stack:
        raise StructuralError(f"unclosed residual(s): {stack}")


def init_weights(net: NetworkSpec, seed: int = 0) -> WeightStore:
    rng = np.random.default_rng(seed)
    return [layer.init_params(rng) for layer in net.layers]


def check_weights(net: NetworkSpec, weights: WeightStore) -> None:
    if len(weights) != len(net.layers):
        raise StructuralError(f"{len(weights)} weight entries for {len(net.layers)} layers")
    for i, (layer, params) in enumerate(zip(net.layers, weights)):
        shapes = layer.param_shapes()
        if set(shapes) != set(params):
            raise StructuralError(f"layer {i} ({layer.tag}): expected params {sorted(shapes)}, got {sorted(params)}")
        for name, shape in shapes.items():
            if np.shape(params[name]) != tuple(shape):
                raise StructuralError(
                    f"layer {i} ({layer.tag}) param {name}: shape {np.shape(params[name])} != {shape}"
                )


def _tile_to(r: np.ndarray, shape: Shape, label: str) -> np.ndarray:
    if r.shape[0] != shape[0] or r.shape[2:] != tuple(shape[2:]):
        raise StructuralError(f"residual {label!r}: shapes {r.shape} and {shape} are incompatible")
    if shape[1] == r.shape[1]:
        return r
    if shape[1] % r.shape[1]:
        raise StructuralError(f"residual {label!r}: {shape[1]} channels not a multiple of {r.shape[1]}")
    return np.tile(r, (1, shape[1] // r.shape[1], 1, 1))


def infer_shapes(net: NetworkSpec, in_shape: Shape) -> list:
    """Output shape after every layer."""
    shapes = []
    stash: dict[str, Shape] = {}
    shape = tuple(in_shape)
    for layer in net.layers:
        if isinstance(layer, ResidualBegin):
            stash[layer.label] = shape
        elif isinstance(layer, ResidualEnd):
            r = stash[layer.label]
            if r[2:] != shape[2:] or shape[1] % r[1]:
                raise StructuralError(f"residual {layer.label!r}: shapes {r} and {shape} are incompatible")
        else:
            shape = layer.output_shape(shape)
        shapes.append(shape)
    return shapes


@dataclass
class Tape:
    """Per-layer inputs and contexts recorded by :func:`forward`."""

    entries: list = field(default_factory=list)
    input_shape: tuple = ()


def forward(net: NetworkSpec, weights: WeightStore, x: np.ndarray, tape: Tape | None = None) -> np.ndarray:
    stash: dict[str, np.ndarray] = {}
    if tape is not None:
        tape.entries.clear()
        tape.input_shape = x.shape
    for layer, params in zip(net.layers, weights):
        ctx = None
        if isinstance(layer, ResidualBegin):
            stash[layer.label] = x
            y = x
        elif isinstance(layer, ResidualEnd):
            r = stash[layer.label]
            y = (x.astype(np.float64) + _tile_to(r, x.shape, layer.label)).astype(x.dtype)
            ctx = r.shape[1]
        else:
            y, ctx = layer.forward(params, x)
        if tape is not None:
            tape.entries.append((x, ctx))
        x = y
    return x


def backward(net: NetworkSpec, weights: WeightStore, tape: Tape, grad: np.ndarray):
    """Reverse pass over a recorded tape. Returns ``(grad_input, grads)``."""
    if len(tape.entries) != len(net.layers):
        raise StateError(f"tape has {len(tape.entries)} entries for {len(net.layers)} layers")
    grads: list[dict] = [{} for _ in net.layers]
    pending: dict[str, np.ndarray] = {}
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        x, ctx = tape.entries[i]
        if isinstance(layer, ResidualEnd):
            n, c = grad.shape[:2]
            rc = ctx
            g = grad.astype(np.float64)
            if rc != c:
                g = g.reshape(n, c // rc, rc, *grad.shape[2:]).sum(axis=1)
            pending[layer.label] = g
        elif isinstance(layer, ResidualBegin):
            grad = (grad.astype(np.float64) + pending.pop(layer.label)).astype(grad.dtype)
        else:
            if grad.shape != layer.output_shape(x.shape):
                raise StateError(f"layer {i} ({layer.tag}): grad {grad.shape} vs output {layer.output_shape(x.shape)}")
            grad, grads[i] = layer.backward(weights[i], x, ctx, grad)
    return grad, grads


def count_params(net: NetworkSpec) -> int:
    return sum(int(np.prod(s)) for layer in net.layers for s in layer.param_shapes().values())


def count_macs(net: NetworkSpec, input_h: int, input_w: int, in_channels: int | None = None) -> int:
    """Multiply-accumulates for one image; conv layers count at their output resolution."""
    if input_h <= 0 or input_w <= 0:
        raise ConfigurationError("input dims must be positive")
    if in_channels is None:
        in_channels = _first_in_channels(net)
    shape: Shape = (1, in_channels, input_h, input_w)
    total = 0
    for layer, out in zip(net.layers, infer_shapes(net, shape)):
        total += layer.macs(shape)
        shape = out
    return total


def _first_in_channels(net: NetworkSpec) -> int:
    for layer in net.layers:
        if isinstance(layer, (Conv, ConvTranspose)):
            return layer.spec.c_in
        if isinstance(layer, LinearBlock):
            return layer.block.f_i
        if isinstance(layer, Dense):
            return layer.n_in
    return 3
