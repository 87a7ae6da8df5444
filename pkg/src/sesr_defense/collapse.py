"""Expansion of convolutions into collapsible linear blocks and their analytic collapse.

A linear block runs a k x k convolution ``A`` (f_i -> p), then a 1 x 1
convolution ``B`` (p -> f_o), optionally adding its input. With no
nonlinearity in between, the composition is itself a k x k convolution::

    C[o, i, u, v] = sum_q B[o, q] * A[q, i, u, v]

and the identity shortcut is a unit tap at the kernel centre.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network as N
from .errors import InvalidResidualError, StructuralError, UnsupportedConfigurationError
from .network import LinearBlock, LinearBlockSpec, NetworkSpec
from .tensor import ConvSpec

DEFAULT_EXPANSION = 64


@dataclass
class BlockWeights:
    A: np.ndarray  # (p, f_i, k, k)
    B: np.ndarray  # (f_o, p, 1, 1)


def expand(spec: ConvSpec, p: int = DEFAULT_EXPANSION, init_seed: int = 0):
    """Replace a bias-free odd square conv by a randomly initialised linear block."""
    if spec.kh != spec.kw or spec.kh % 2 == 0:
        raise UnsupportedConfigurationError(f"only odd square kernels can be expanded, got {spec.kh}x{spec.kw}")
    if spec.has_bias:
        raise UnsupportedConfigurationError("expansion is defined for bias-free convolutions")
    block = LinearBlockSpec(spec.kh, spec.c_in, spec.c_out, p, short_residual=spec.c_in == spec.c_out)
    params = LinearBlock(block).init_params(np.random.default_rng(init_seed))
    return block, BlockWeights(params["A"], params["B"])


def fold_residual(C: np.ndarray) -> np.ndarray:
    """Add an identity convolution to the k x k (f -> f) kernel ``C``."""
    C = np.asarray(C)
    f_o, f_i, kh, kw = C.shape
    if f_i != f_o:
        raise InvalidResidualError(f"cannot fold an identity into a {f_i}->{f_o} kernel")
    if kh % 2 == 0 or kw % 2 == 0:
        raise InvalidResidualError("identity fold needs an odd kernel")
    out = C.copy()
    idx = np.arange(f_o)
    out[idx, idx, kh // 2, kw // 2] += 1
    return out


def collapse_block(spec: LinearBlockSpec, w: BlockWeights) -> np.ndarray:
    """Collapsed (f_o, f_i, k, k) float32 kernel of a linear block."""
    A = np.asarray(w.A, dtype=np.float64)
    B = np.asarray(w.B, dtype=np.float64)
    if A.shape != spec.expand_spec.weight_shape or B.shape != spec.project_spec.weight_shape:
        raise StructuralError(f"block weights {A.shape}, {B.shape} do not match {spec}")
    C = np.einsum("oq,qiuv->oiuv", B[:, :, 0, 0], A)
    if spec.short_residual:
        C = fold_residual(C)
    return C.astype(np.float32)


def collapse_network(net: NetworkSpec, weights: N.WeightStore):
    """Replace every linear block by its collapsed convolution.

    Activations, residual tags and depth-to-space layers are carried over
    unchanged. Only parameter-free layers may sit between blocks.
    """
    N.check_weights(net, weights)
    layers, out_weights = [], []
    for i, (layer, params) in enumerate(zip(net.layers, weights)):
        if isinstance(layer, LinearBlock):
            b = layer.block
            layers.append(N.Conv(b.collapsed_spec))
            out_weights.append({"w": collapse_block(b, BlockWeights(params["A"], params["B"]))})
        elif isinstance(layer, N.Conv):
            # a plain conv inside an "expanded" net would mean the block was split by something
            raise StructuralError(f"layer {i}: plain convolution found in expanded network (activation inside a block?)")
        else:
            layers.append(layer)
            out_weights.append({k: np.array(v, copy=True) for k, v in params.items()})
    return NetworkSpec(net.name.replace("expanded", "collapsed"), tuple(layers), net.scale), out_weights


@dataclass
class CollapseReport:
    max_abs_diff: float
    tol: float
    trials: int

    @property
    def passed(self) -> bool:
        return self.max_abs_diff < self.tol


def verify_collapse(
    expanded: tuple,
    collapsed: tuple,
    trials: int = 10,
    tol: float = 1e-4,
    shape: tuple = (1, 3, 32, 32),
    seed: int = 0,
) -> CollapseReport:
    """Compare two (NetworkSpec, WeightStore) pairs on uniform [0, 1] inputs (pre-clamp outputs)."""
    (net_a, w_a), (net_b, w_b) = expanded, collapsed
    try:
        out_a = N.infer_shapes(net_a, shape)[-1] if net_a.layers else shape
        out_b = N.infer_shapes(net_b, shape)[-1] if net_b.layers else shape
    except (ValueError, KeyError) as exc:
        raise StructuralError(f"networks do not accept input {shape}: {exc}") from exc
    if out_a != out_b:
        raise StructuralError(f"output shapes differ: {out_a} vs {out_b}")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = rng.random(shape, dtype=np.float32)
        ya = N.forward(net_a, w_a, x)
        yb = N.forward(net_b, w_b, x)
        worst = max(worst, float(np.max(np.abs(ya.astype(np.float64) - yb))))
    return CollapseReport(worst, tol, trials)
