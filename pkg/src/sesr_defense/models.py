"""SESR and FSRCNN network builders, exact cost counters and x2 inference."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import network as N
from .errors import ConfigurationError, DescriptionSyntaxError, DimensionError
from .network import (
    Activation,
    Conv,
    ConvTranspose,
    DepthToSpace,
    LinearBlock,
    LinearBlockSpec,
    NetworkSpec,
    ResidualBegin,
    ResidualEnd,
    count_macs,
    count_params,
)
from .tensor import ConvSpec

__all__ = [
    "SesrConfig",
    "PRESETS",
    "build_sesr",
    "build_fsrcnn",
    "build_edsr_base",
    "build_net",
    "count_params",
    "count_macs",
    "sr_upscale",
    "init_sr_weights",
    "parse_description",
    "describe",
    "REPORTED",
    "agrees_to_sig_digits",
]


@dataclass(frozen=True)
class SesrConfig:
    m: int
    f: int
    p: int = 64
    scale: int = 2
    activation: str = "relu"

    def __post_init__(self):
        if self.m <= 0 or self.f <= 0 or self.p <= 0:
            raise ConfigurationError(f"SESR needs positive m, f, p; got {self}")
        if self.scale != 2:
            raise ConfigurationError("only x2 super resolution is supported")


PRESETS = {
    "sesr_m2": SesrConfig(m=2, f=16),
    "sesr_m3": SesrConfig(m=3, f=16),
    "sesr_m5": SesrConfig(m=5, f=16),
    "sesr_xl": SesrConfig(m=11, f=32),
}

# Reported (params, MACs at 299x299) per model.
REPORTED = {
    "fsrcnn": (24_336, 5.82e9),
    "edsr_base": (1.19e6, 106e9),
    "edsr": (42e6, 3400e9),
    "sesr_m2": (10_608, 0.948e9),
    "sesr_m3": (12_912, 1.154e9),
    "sesr_m5": (17_520, 1.566e9),
    "sesr_xl": (113_376, 10.13e9),
}


def _conv_or_block(k: int, c_in: int, c_out: int, expanded: bool, p: int):
    if expanded:
        return LinearBlock(LinearBlockSpec(k, c_in, c_out, max(p, c_in, c_out), short_residual=c_in == c_out))
    return Conv(ConvSpec(k, k, c_in, c_out))


def build_sesr(cfg: SesrConfig | str, form: str = "collapsed") -> NetworkSpec:
    """SESR layer list.

    ``form="expanded"`` gives the training-time network where every
    convolution is a linear block with expansion ``cfg.p``.
    """
    name = cfg if isinstance(cfg, str) else "sesr_custom"
    if isinstance(cfg, str):
        try:
            cfg = PRESETS[cfg]
        except KeyError:
            raise ConfigurationError(f"unknown SESR preset {cfg!r}") from None
    if form not in ("expanded", "collapsed"):
        raise ConfigurationError(f"form must be 'expanded' or 'collapsed', got {form!r}")
    ex = form == "expanded"
    act = Activation(cfg.activation)
    s2 = cfg.scale * cfg.scale
    layers = [
        ResidualBegin("image"),
        _conv_or_block(5, 3, cfg.f, ex, cfg.p),
        act,
        ResidualBegin("features"),
    ]
    for _ in range(cfg.m):
        layers += [_conv_or_block(3, cfg.f, cfg.f, ex, cfg.p), act]
    layers += [
        ResidualEnd("features"),
        _conv_or_block(5, cfg.f, s2 * 3, ex, cfg.p),
        ResidualEnd("image"),
        DepthToSpace(cfg.scale),
    ]
    return NetworkSpec(f"{name}_{form}", tuple(layers), cfg.scale)


def build_fsrcnn(activation: str = "relu") -> NetworkSpec:
    act = Activation(activation)
    layers = [Conv(ConvSpec(5, 5, 3, 56)), act, Conv(ConvSpec(1, 1, 56, 12)), act]
    for _ in range(4):
        layers += [Conv(ConvSpec(3, 3, 12, 12)), act]
    layers += [
        Conv(ConvSpec(1, 1, 12, 56)),
        act,
        # stride 2, pad 4, output_padding 1 lands exactly on 2h x 2w
        ConvTranspose(ConvSpec(9, 9, 56, 3, stride=2, padding=4, output_padding=1)),
    ]
    return NetworkSpec("fsrcnn", tuple(layers), 2)


def build_edsr_base(n_resblocks: int = 16, f: int = 64) -> NetworkSpec:
    """Cost-only layer list of the public EDSR-base x2 configuration (biased convs)."""

    def c3(ci, co):
        return Conv(ConvSpec(3, 3, ci, co, has_bias=True))

    layers = [c3(3, f), ResidualBegin("body")]
    for i in range(n_resblocks):
        layers += [ResidualBegin(f"rb{i}"), c3(f, f), Activation(), c3(f, f), ResidualEnd(f"rb{i}")]
    layers += [c3(f, f), ResidualEnd("body"), c3(f, 4 * f), DepthToSpace(2), c3(f, 3)]
    return NetworkSpec("edsr_base", tuple(layers), 2)


def build_net(arch: str, form: str = "collapsed", p: int = 64, activation: str = "relu") -> NetworkSpec:
    if arch == "fsrcnn":
        return build_fsrcnn(activation)
    if arch == "edsr_base":
        return build_edsr_base()
    if arch in PRESETS:
        base = PRESETS[arch]
        cfg = SesrConfig(base.m, base.f, p, base.scale, activation)
        net = build_sesr(cfg, form)
        return NetworkSpec(f"{arch}_{form}", net.layers, net.scale)
    raise ConfigurationError(f"unknown architecture {arch!r}")


def init_sr_weights(net: NetworkSpec, seed: int = 0) -> N.WeightStore:
    """Xavier init with the last convolution's output projection zeroed.

    The untrained network then reproduces the channel-replicated input skip
    (a nearest-neighbour upscale) instead of adding random noise to it.
    """
    weights = N.init_weights(net, seed)
    for layer, params in zip(reversed(net.layers), reversed(weights)):
        if isinstance(layer, LinearBlock):
            params["B"][:] = 0
            break
        if isinstance(layer, (Conv, ConvTranspose)):
            params["w"][:] = 0
            break
    return weights


def sr_upscale(net: NetworkSpec, weights: N.WeightStore, image: np.ndarray) -> np.ndarray:
    """Run the SR network on (n, 3, h, w) images in [0, 1]; clamp only the final output."""
    if image.ndim != 4 or image.shape[1] != 3:
        raise DimensionError(f"expected (n, 3, h, w) image, got {image.shape}", axis="channel")
    N.check_weights(net, weights)
    out = N.forward(net, weights, image.astype(np.float32, copy=False))
    return np.clip(out, 0.0, 1.0)


def agrees_to_sig_digits(value: float, reported: float, digits: int = 3) -> bool:
    """True when both numbers share their leading ``digits`` significant digits.

    Published tables truncate (5,825,369,160 is printed as 5.82B), so the
    comparison truncates instead of rounding.
    """

    def lead(x):
        if x == 0:
            return 0
        e = math.floor(math.log10(abs(x))) - digits + 1
        return math.floor(abs(x) / 10**e + 1e-9) * (1 if x > 0 else -1), e

    return lead(value) == lead(reported)


# --- text network description -------------------------------------------------


def parse_description(text: str, name: str = "described", scale: int = 1) -> NetworkSpec:
    """Parse one-layer-per-line descriptions.

    Recognised lines::

        conv c_in c_out k stride pad
        convT c_in c_out k stride pad [output_padding]
        block k f_i f_o p [res]
        act relu|prelu
        d2s block
        res_begin label / res_end label

    ``pad`` may be ``same``. Blank lines and ``#`` comments are ignored.
    """
    layers = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        op, *args = line.split()
        try:
            if op in ("conv", "convT"):
                if len(args) not in (5, 6) or (op == "conv" and len(args) != 5):
                    raise DescriptionSyntaxError(f"'{op}' takes {'5' if op == 'conv' else '5 or 6'} arguments", lineno)
                c_in, c_out, k, stride = (int(a) for a in args[:4])
                pad = "same" if args[4] == "same" else int(args[4])
                op_pad = int(args[5]) if len(args) == 6 else 0
                spec = ConvSpec(k, k, c_in, c_out, stride=stride, padding=pad, output_padding=op_pad)
                layers.append(Conv(spec) if op == "conv" else ConvTranspose(spec))
                if op == "convT":
                    scale *= stride
            elif op == "block":
                if len(args) not in (4, 5):
                    raise DescriptionSyntaxError("'block' takes k f_i f_o p [res]", lineno)
                k, f_i, f_o, p = (int(a) for a in args[:4])
                layers.append(LinearBlock(LinearBlockSpec(k, f_i, f_o, p, short_residual=len(args) == 5)))
            elif op == "d2s":
                if len(args) != 1:
                    raise DescriptionSyntaxError("'d2s' takes one argument", lineno)
                layers.append(DepthToSpace(int(args[0])))
                scale *= int(args[0])
            elif op == "act":
                layers.append(Activation(args[0] if args else "relu"))
            elif op in ("res_begin", "res_end"):
                if len(args) != 1:
                    raise DescriptionSyntaxError(f"'{op}' takes a label", lineno)
                layers.append(ResidualBegin(args[0]) if op == "res_begin" else ResidualEnd(args[0]))
            else:
                raise DescriptionSyntaxError(f"unknown layer type {op!r}", lineno)
        except DescriptionSyntaxError:
            raise
        except ValueError as exc:
            raise DescriptionSyntaxError(str(exc), lineno) from exc
    try:
        return NetworkSpec(name, tuple(layers), scale)
    except ValueError as exc:
        raise DescriptionSyntaxError(str(exc), len(text.splitlines())) from exc


def describe(net: NetworkSpec) -> str:
    lines = []
    for layer in net.layers:
        if isinstance(layer, (Conv, ConvTranspose)):
            s = layer.spec
            kind = "convT" if isinstance(layer, ConvTranspose) else "conv"
            line = f"{kind} {s.c_in} {s.c_out} {s.kh} {s.stride} {s.padding}"
            if isinstance(layer, ConvTranspose) and s.output_padding:
                line += f" {s.output_padding}"
            lines.append(line)
        elif isinstance(layer, LinearBlock):
            b = layer.block
            lines.append(f"block {b.k} {b.f_i} {b.f_o} {b.p}" + (" res" if b.short_residual else ""))
        elif isinstance(layer, Activation):
            lines.append(f"act {layer.kind}")
        elif isinstance(layer, DepthToSpace):
            lines.append(f"d2s {layer.block}")
        elif isinstance(layer, ResidualBegin):
            lines.append(f"res_begin {layer.label}")
        elif isinstance(layer, ResidualEnd):
            lines.append(f"res_end {layer.label}")
        else:
            raise ConfigurationError(f"layer {layer.tag} has no text form")
    return "\n".join(lines) + "\n"
