import numpy as np
import pytest

from sesr_defense import models as M
from sesr_defense import network as N
from sesr_defense import tensor as T
from sesr_defense.collapse import (
    BlockWeights,
    collapse_block,
    collapse_network,
    expand,
    fold_residual,
    verify_collapse,
)
from sesr_defense.errors import InvalidResidualError, StructuralError, UnsupportedConfigurationError
from sesr_defense.network import LinearBlockSpec
from sesr_defense.tensor import ConvSpec


def test_collapse_equals_composition(rng):
    spec = LinearBlockSpec(5, 3, 4, 16)
    w = BlockWeights(rng.normal(size=(16, 3, 5, 5)), rng.normal(size=(4, 16, 1, 1)))
    x = rng.normal(size=(2, 3, 9, 9))
    two_step = T.conv2d(T.conv2d(x, spec.expand_spec, w.A), spec.project_spec, w.B)
    one_step = T.conv2d(x, spec.collapsed_spec, collapse_block(spec, w).astype(np.float64))
    np.testing.assert_allclose(one_step, two_step, atol=1e-5)


def test_short_residual_folds_into_centre_tap(rng):
    spec = LinearBlockSpec(3, 4, 4, 8, short_residual=True)
    w = BlockWeights(rng.normal(size=(8, 4, 3, 3)), rng.normal(size=(4, 8, 1, 1)))
    x = rng.normal(size=(1, 4, 6, 6))
    ref = T.conv2d(T.conv2d(x, spec.expand_spec, w.A), spec.project_spec, w.B) + x
    np.testing.assert_allclose(T.conv2d(x, spec.collapsed_spec, collapse_block(spec, w)), ref, atol=1e-5)


def test_fold_residual_of_zero_is_identity_kernel():
    C = fold_residual(np.zeros((2, 2, 3, 3)))
    x = np.random.default_rng(1).normal(size=(1, 2, 4, 4))
    np.testing.assert_array_equal(T.conv2d(x, ConvSpec(3, 3, 2, 2), C), x)
    with pytest.raises(InvalidResidualError):
        fold_residual(np.zeros((2, 3, 3, 3)))


def test_expand_validates():
    block, w = expand(ConvSpec(3, 3, 16, 16), p=32)
    assert block.short_residual and w.A.shape == (32, 16, 3, 3) and w.B.shape == (16, 32, 1, 1)
    with pytest.raises(UnsupportedConfigurationError):
        expand(ConvSpec(2, 2, 3, 3))
    with pytest.raises(UnsupportedConfigurationError):
        expand(ConvSpec(3, 5, 3, 3))
    with pytest.raises(UnsupportedConfigurationError):
        expand(ConvSpec(3, 3, 3, 3, has_bias=True))


def test_collapse_block_rejects_wrong_shapes(rng):
    with pytest.raises(StructuralError):
        collapse_block(LinearBlockSpec(3, 2, 2, 4), BlockWeights(rng.normal(size=(4, 2, 3, 3)), rng.normal(size=(3, 4, 1, 1))))


def test_sesr_collapse_small_expansion(rng):
    net = M.build_net("sesr_m2", "expanded", p=16)
    w = N.init_weights(net, 1)
    cnet, cw = collapse_network(net, w)
    assert N.count_params(cnet) == 10_608
    assert all(not isinstance(layer, N.LinearBlock) for layer in cnet.layers)
    rep = verify_collapse((net, w), (cnet, cw), trials=3, shape=(1, 3, 16, 16))
    assert rep.passed and rep.max_abs_diff < 1e-5


def test_plain_conv_in_expanded_net_is_rejected():
    net = N.NetworkSpec("x_expanded", (N.LinearBlock(LinearBlockSpec(3, 3, 3, 4)), N.Conv(ConvSpec(3, 3, 3, 3))))
    with pytest.raises(StructuralError):
        collapse_network(net, N.init_weights(net))


def test_verify_collapse_detects_mismatch():
    net = M.build_net("sesr_m2", "expanded", p=16)
    w = N.init_weights(net, 1)
    cnet, cw = collapse_network(net, w)
    cw[1]["w"] = cw[1]["w"] + 0.1
    assert not verify_collapse((net, w), (cnet, cw), trials=2, shape=(1, 3, 8, 8)).passed
    with pytest.raises(StructuralError):
        verify_collapse((net, w), (M.build_net("sesr_m3"), N.init_weights(M.build_net("sesr_m3"))), trials=1,
                        shape=(1, 1, 8, 8))
