import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sesr_defense import models as M
from sesr_defense import network as N
from sesr_defense.defense import jpeg as J
from sesr_defense.defense import resample as R
from sesr_defense.defense import wavelet as W
from sesr_defense.defense import DefenseConfig, defend
from sesr_defense.errors import ConfigurationError, DimensionError
from sesr_defense.training import psnr


def _rand(rng, shape=(1, 3, 64, 64)):
    return rng.random(shape, dtype=np.float32)


# --- JPEG ---------------------------------------------------------------------


def test_quality_50_keeps_base_tables():
    np.testing.assert_array_equal(J.quant_table(J.LUMA_TABLE, 50), J.LUMA_TABLE)
    np.testing.assert_array_equal(J.quant_table(J.CHROMA_TABLE, 50), J.CHROMA_TABLE)


def test_quality_100_tables_are_all_ones():
    assert (J.quant_table(J.LUMA_TABLE, 100) == 1).all()
    assert (J.quant_table(J.CHROMA_TABLE, 100) == 1).all()


def test_quality_scaling_rule():
    assert J.quality_scale(10) == 500
    assert J.quality_scale(75) == 50
    assert J.quant_table(J.LUMA_TABLE, 1).max() == 255  # clamped
    assert J.quant_table(J.LUMA_TABLE, 75)[0, 0] == 8  # floor(16 * 0.5 + 0.5)
    for q in (0, 101, -5):
        with pytest.raises(ConfigurationError):
            J.quality_scale(q)


def test_colour_transform_round_trip(rng):
    x = rng.random((2, 3, 5, 4)) * 255
    np.testing.assert_allclose(J.ycbcr_to_rgb(J.rgb_to_ycbcr(x)), x, atol=1e-3)


def test_quality_100_round_trip_psnr(rng):
    for _ in range(3):
        x = _rand(rng)
        assert psnr(J.jpeg_round_trip(x, 100), x) > 45


@pytest.mark.parametrize("quality", [1, 10, 50, 75, 100])
def test_constant_block_has_only_dc(quality):
    plane = np.full((8, 8), 173.0)
    q = J.quantize_plane(plane, J.quant_table(J.LUMA_TABLE, quality))
    assert np.count_nonzero(q[0, 0]) <= 1 and q[0, 0][0, 0] == np.round(8 * (173 - 128) / q[0, 0].max() * 0 + q[0, 0][0, 0])
    assert np.count_nonzero(q[0, 0].ravel()[1:]) == 0


@pytest.mark.parametrize("quality", [1, 25, 50, 75, 90, 100])
def test_constant_colour_error_bounded_by_dc_step(quality):
    # DC of an orthonormal 8x8 DCT is 8 * mean, so the per-pixel error is at
    # most half a DC step / 8 in each YCbCr plane (0..255 units).
    img = np.empty((1, 3, 16, 16), np.float32)
    img[0, 0], img[0, 1], img[0, 2] = 0.3, 0.6, 0.45
    out = J.jpeg_round_trip(img, quality)
    qy = J.quant_table(J.LUMA_TABLE, quality)[0, 0] / 16
    qc = J.quant_table(J.CHROMA_TABLE, quality)[0, 0] / 16
    bound = (qy + 1.772 * qc + 0.5) / 255  # worst RGB channel gain plus float32 slack
    assert np.abs(out - img).max() <= bound
    assert np.ptp(out[0, 0]) < 1e-5  # still constant


def test_constant_colour_within_two_levels_at_default_quality():
    img = np.empty((1, 3, 16, 16), np.float32)
    img[0, 0], img[0, 1], img[0, 2] = 0.3, 0.6, 0.45
    assert np.abs(J.jpeg_round_trip(img, 75) - img).max() < 2 / 255


def test_jpeg_handles_ragged_sizes(rng):
    x = _rand(rng, (2, 3, 13, 21))
    y = J.jpeg_round_trip(x, 75)
    assert y.shape == x.shape and y.dtype == np.float32 and 0 <= y.min() and y.max() <= 1
    with pytest.raises(DimensionError):
        J.jpeg_round_trip(np.zeros((1, 1, 8, 8)), 75)


def test_lower_quality_loses_more(rng):
    x = _rand(rng)
    assert psnr(J.jpeg_round_trip(x, 90), x) > psnr(J.jpeg_round_trip(x, 30), x)


# --- wavelets -----------------------------------------------------------------


@pytest.mark.parametrize("wavelet", W.WAVELETS)
def test_perfect_reconstruction_and_parseval(rng, wavelet):
    for _ in range(5):
        x = rng.normal(size=(64, 64))
        pyr = W.dwt2(x, wavelet, 3)
        np.testing.assert_allclose(W.idwt2(pyr), x, atol=1e-6)
        energy = np.sum(pyr.ll**2) + sum(np.sum(b**2) for level in pyr.details for b in level)
        assert energy == pytest.approx(np.sum(x**2), rel=1e-5)


def test_subband_layout(rng):
    pyr = W.dwt2(rng.normal(size=(32, 48)), "haar", 2)
    assert pyr.levels == 2
    assert pyr.details[0][0].shape == (16, 24)  # level 1 is finest
    assert pyr.details[1][2].shape == (8, 12)
    assert pyr.ll.shape == (8, 12)


def test_haar_filters():
    x = np.array([[1.0, 3.0], [5.0, 7.0]])
    x = np.pad(x, ((0, 6), (0, 6)))
    pyr = W.dwt2(x, "haar", 1)
    assert pyr.ll[0, 0] == pytest.approx((1 + 3 + 5 + 7) / 2)


@pytest.mark.parametrize("wavelet,tol", [("haar", 0.0), ("db2", 1e-6)])
def test_constant_plane_has_zero_details(wavelet, tol):
    pyr = W.dwt2(np.full((32, 32), 0.7), wavelet, 2)
    for level in pyr.details:
        for band in level:
            assert np.abs(band).max() <= tol + 1e-12


def test_odd_sizes_are_padded_and_cropped(rng):
    x = rng.normal(size=(30, 37))
    np.testing.assert_allclose(W.idwt2(W.dwt2(x, "db2", 2)), x, atol=1e-6)


def test_too_many_levels():
    assert W.max_levels(64, 64) == 4
    with pytest.raises(ConfigurationError):
        W.dwt2(np.zeros((16, 16)), "db2", 3)
    with pytest.raises(ConfigurationError):
        W.dwt2(np.zeros((16, 16)), "sym8", 1)


def test_noise_sigma():
    assert W.estimate_noise_sigma(np.full((4, 4), 0.6745)) == pytest.approx(1.0)
    assert W.estimate_noise_sigma(np.zeros((4, 4))) == 0.0
    sigma = W.estimate_noise_sigma(np.random.default_rng(5).normal(size=(64, 64)))
    assert 0.9 <= sigma <= 1.1


def test_soft_threshold():
    assert W.soft_threshold(3.0, 1.0) == 2.0
    assert W.soft_threshold(-0.5, 1.0) == 0.0
    assert W.soft_threshold(-3.0, 1.0) == -2.0
    np.testing.assert_array_equal(W.soft_threshold(np.array([1.0, -1.0]), 1.0), [0.0, 0.0])


def test_bayes_shrink_threshold():
    band = np.array([1.0, -1.0, 1.0, -1.0])  # var 1
    assert W.bayes_shrink_threshold(band, 0.0) == 0.0
    assert W.bayes_shrink_threshold(band, 0.6) == pytest.approx(0.36 / 0.8)
    assert W.bayes_shrink_threshold(band, 2.0) == 1.0  # sigma_x = 0: kill the band


def test_denoise_leaves_constant_image():
    x = np.full((1, 3, 32, 32), 0.4, np.float32)
    np.testing.assert_allclose(W.wavelet_denoise(x), x, atol=1e-6)


def test_denoise_improves_psnr_on_noisy_images():
    from sesr_defense.data import synthetic_corpus

    rng = np.random.default_rng(11)
    wins = 0
    for clean in synthetic_corpus(10, 64, seed=2):
        clean = clean[None]
        noisy = np.clip(clean + rng.uniform(-8 / 255, 8 / 255, clean.shape), 0, 1).astype(np.float32)
        wins += psnr(W.wavelet_denoise(noisy), clean) > psnr(noisy, clean)
    assert wins >= 9


# --- resampling ---------------------------------------------------------------


def test_nearest_replicates_pixels():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    np.testing.assert_array_equal(R.interpolate_upscale(x, "nearest")[0, 0],
                                  [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])


@pytest.mark.parametrize("method", ["nearest", "bicubic"])
def test_constant_stays_constant(method):
    x = np.full((1, 3, 5, 7), 0.35, np.float32)
    np.testing.assert_allclose(R.interpolate_upscale(x, method), 0.35, atol=1e-6)
    np.testing.assert_allclose(R.bicubic_downscale(np.full((1, 3, 8, 8), 0.35, np.float32)), 0.35, atol=1e-6)


def test_resize_matrix_rows_sum_to_one():
    for n_in, n_out in ((7, 14), (14, 7), (5, 5), (9, 4)):
        np.testing.assert_allclose(R.resize_matrix(n_in, n_out).sum(axis=1), 1.0)


def test_cubic_kernel_values():
    np.testing.assert_allclose(R.cubic_kernel(np.array([0.0, 1.0, 2.0, 0.5])), [1.0, 0.0, 0.0, 0.5625])


def test_bicubic_reproduces_ramp_away_from_edges():
    # Edge clamping bends the ramp within two samples of the border.
    n = 16
    ramp = np.tile(np.arange(n, dtype=np.float64) / n, (n, 1))[None, None] * 0.5
    up = R.resize_bicubic(ramp, 2 * n, 2 * n).astype(np.float64)
    centres = ((np.arange(2 * n) + 0.5) / 2 - 0.5) / n * 0.5
    interior = slice(4, 2 * n - 4)
    np.testing.assert_allclose(up[0, 0, :, interior], np.tile(centres[interior], (2 * n, 1)), atol=1e-6)


def test_unknown_interpolation():
    with pytest.raises(ConfigurationError):
        R.interpolate_upscale(np.zeros((1, 3, 2, 2)), "lanczos")


# --- pipeline -----------------------------------------------------------------


def test_all_disabled_is_identity(rng):
    x = _rand(rng, (2, 3, 16, 16))
    np.testing.assert_array_equal(defend(x, DefenseConfig.disabled()), x)


@pytest.mark.parametrize("upscaler", ["nearest", "bicubic", "sesr_m2", "fsrcnn"])
def test_output_is_twice_the_size(rng, upscaler):
    sr = None
    if upscaler in ("sesr_m2", "fsrcnn"):
        net = M.build_net(upscaler)
        sr = (net, M.init_sr_weights(net))
    y = defend(_rand(rng, (1, 3, 24, 20)), DefenseConfig(upscaler=upscaler), sr_model=sr)
    assert y.shape == (1, 3, 48, 40) and 0 <= y.min() and y.max() <= 1


def test_stage_order_is_jpeg_then_wavelet_then_upscale(rng):
    x = _rand(rng, (1, 3, 32, 32))
    expected = R.interpolate_upscale(W.wavelet_denoise(J.jpeg_round_trip(x, 75), "db2", 2), "bicubic")
    np.testing.assert_array_equal(defend(x, DefenseConfig(upscaler="bicubic")), expected)
    swapped = R.interpolate_upscale(J.jpeg_round_trip(W.wavelet_denoise(x, "db2", 2), 75), "bicubic")
    assert not np.array_equal(defend(x, DefenseConfig(upscaler="bicubic")), swapped)


def test_jpeg_toggle_changes_output(rng):
    x = _rand(rng, (1, 3, 32, 32))
    assert not np.array_equal(defend(x, DefenseConfig(upscaler="nearest")),
                              defend(x, DefenseConfig(upscaler="nearest", jpeg_enabled=False)))


def test_full_size_geometry():
    x = np.full((1, 3, 299, 299), 0.5, np.float32)
    net = M.build_net("sesr_m2")
    assert defend(x, DefenseConfig(), sr_model=(net, N.init_weights(net))).shape == (1, 3, 598, 598)


def test_sr_upscaler_needs_weights(rng, tmp_path):
    with pytest.raises(ConfigurationError):
        defend(_rand(rng, (1, 3, 16, 16)), DefenseConfig())
    with pytest.raises(ConfigurationError):
        defend(_rand(rng, (1, 3, 16, 16)), DefenseConfig(weight_path=str(tmp_path / "missing.wts")))


def test_sr_weights_load_from_file(rng, tmp_path):
    from sesr_defense.io import save_weights

    net = M.build_net("sesr_m2")
    path = tmp_path / "m2.wts"
    save_weights(path, net, M.init_sr_weights(net))
    y = defend(_rand(rng, (1, 3, 16, 16)), DefenseConfig(weight_path=str(path), jpeg_enabled=False,
                                                          wavelet_enabled=False))
    assert y.shape == (1, 3, 32, 32)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        DefenseConfig(jpeg_quality=0)
    with pytest.raises(ConfigurationError):
        DefenseConfig(levels=0)
    with pytest.raises(ConfigurationError):
        DefenseConfig(upscaler="lanczos")
    with pytest.raises(ConfigurationError):
        defend(np.zeros((1, 3, 8, 8), np.float32), DefenseConfig(upscaler="nearest", levels=2))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["nearest", "bicubic"]), st.booleans(), st.booleans())
def test_pipeline_maps_unit_range_to_unit_range(seed, upscaler, jpeg, wav):
    x = np.random.default_rng(seed).random((1, 3, 16, 16), dtype=np.float32)
    y = defend(x, DefenseConfig(upscaler=upscaler, jpeg_enabled=jpeg, wavelet_enabled=wav))
    assert 0 <= y.min() and y.max() <= 1
    np.testing.assert_array_equal(y, defend(x, DefenseConfig(upscaler=upscaler, jpeg_enabled=jpeg,
                                                             wavelet_enabled=wav)))
