"""Degradation pipeline: noise model contract, kernels, simulator."""

from __future__ import annotations

import numpy as np
import pytest

from fibresr.degrade import (
    NOISE_PRESETS,
    ORIGINAL_NOISE,
    SYNTHETIC_NOISE,
    DegradeConfig,
    NoiseParams,
    VoronoiDegrader,
    apply_noise,
    apply_noise_pixels,
    degrade_frame,
    downscale_bicubic,
    downscale_voronoi,
    noise_with_params,
    simulate_pcle,
)
from fibresr.errors import ConfigurationError
from fibresr.geometry import generate_quasi_hex_pattern, voronoi_labels
from fibresr.images import CartesianImage
from fibresr.iqa import psnr
from fibresr.reconstruct import FibreSignals

from conftest import make_texture


# ---------------------------------------------------------------------------
# Noise model


def test_noise_presets():
    assert SYNTHETIC_NOISE.sigma_add == 0.03 and SYNTHETIC_NOISE.sigma_mult == 0.05
    assert ORIGINAL_NOISE.sigma_add == 0.1 and ORIGINAL_NOISE.sigma_mult == 0.5
    assert SYNTHETIC_NOISE.jitter_half_width == 0.025
    assert set(NOISE_PRESETS) == {"synthetic", "original"}


def test_apply_noise_draw_order_contract():
    # the draw order (c1, c2, additive vector, multiplicative vector) from a
    # single generator is part of the replayability contract
    params = NoiseParams(sigma_add=0.04, sigma_mult=0.08, jitter_half_width=0.02)
    signals = FibreSignals(values=np.linspace(0.1, 0.9, 50))
    got = apply_noise(signals, params, seed=77).values

    rng = np.random.default_rng(77)
    c1 = rng.uniform(-0.02, 0.02)
    c2 = rng.uniform(-0.02, 0.02)
    a = rng.normal(0.0, max(0.0, 0.04 + c1), size=50)
    m = rng.normal(0.0, max(0.0, 0.08 + c2), size=50)
    expect = signals.values * (1.0 + m) + a
    np.testing.assert_array_equal(got, expect)


def test_apply_noise_moments():
    # with jitter disabled: out = s(1+m) + a, so for s = 1 the standard
    # deviation is sqrt(sigma_add^2 + sigma_mult^2)
    params = NoiseParams(sigma_add=0.03, sigma_mult=0.05, jitter_half_width=0.0)
    signals = FibreSignals(values=np.ones(200_000))
    out = apply_noise(signals, params, seed=5).values
    assert out.mean() == pytest.approx(1.0, abs=5e-4)
    assert out.std() == pytest.approx(np.hypot(0.03, 0.05), abs=5e-4)


def test_apply_noise_disabled_is_bitexact_copy(rng):
    params = NoiseParams(enabled=False)
    signals = FibreSignals(values=rng.random(64))
    out = apply_noise(signals, params, seed=3)
    np.testing.assert_array_equal(out.values, signals.values)
    assert out.values is not signals.values


def test_apply_noise_deterministic(rng):
    signals = FibreSignals(values=rng.random(32))
    a = apply_noise(signals, SYNTHETIC_NOISE, seed=9).values
    b = apply_noise(signals, SYNTHETIC_NOISE, seed=9).values
    c = apply_noise(signals, SYNTHETIC_NOISE, seed=10).values
    np.testing.assert_array_equal(a, b)
    assert np.abs(a - c).max() > 0


def test_apply_noise_sigma_clamped_nonnegative():
    # jitter can push an effective sigma below zero; it must clamp, not raise
    params = NoiseParams(sigma_add=0.001, sigma_mult=0.0, jitter_half_width=0.025)
    signals = FibreSignals(values=np.full(1000, 0.5))
    for seed in range(8):
        out = apply_noise(signals, params, seed=seed).values
        assert np.isfinite(out).all()


def test_apply_noise_pixels_matches_flat_draw(rng):
    vals = rng.random((12, 9))
    params = NoiseParams(sigma_add=0.02, sigma_mult=0.1)
    got = apply_noise_pixels(vals, params, seed=21)
    flat = apply_noise(FibreSignals(values=vals.ravel()), params, seed=21).values
    np.testing.assert_allclose(got, flat.reshape(12, 9), atol=1e-15)


def test_noise_params_validation():
    with pytest.raises(ConfigurationError):
        NoiseParams(sigma_add=-0.1).validate()
    with pytest.raises(ConfigurationError):
        NoiseParams(sigma_mult=-0.1).validate()
    with pytest.raises(ConfigurationError):
        NoiseParams(jitter_half_width=-1.0).validate()
    NoiseParams().validate()


def test_noise_with_params_presets_and_overrides():
    p = noise_with_params(preset="original", sigma_add=0.2)
    assert p.sigma_add == 0.2 and p.sigma_mult == 0.5
    with pytest.raises(ConfigurationError):
        noise_with_params(preset="bogus")


# ---------------------------------------------------------------------------
# Voronoi kernel


def test_voronoi_cell_means_match_bruteforce(pattern_32, rng):
    img = CartesianImage.from_array(rng.random((32, 32)))
    degrader = VoronoiDegrader(pattern_32, 32, 32)
    got = degrader.signals(img).values
    labels = voronoi_labels(degrader.pattern, 32, 32, full_rect=True).labels
    stored = img.values.astype(np.float64)
    for i in range(degrader.pattern.n_fibres):
        cell = labels == i
        if cell.any():
            assert got[i] == pytest.approx(stored[cell].mean(), abs=1e-9)


def test_voronoi_constant_noise_free_is_constant(pattern_32):
    img = CartesianImage.from_array(np.full((32, 32), 0.42))
    cfg = DegradeConfig(noise=NoiseParams(enabled=False))
    out = downscale_voronoi(img, pattern_32, cfg)
    np.testing.assert_allclose(out.values[out.mask], 0.42, atol=1e-6)


def test_voronoi_checkerboard_lowpass(pattern_64):
    # period-1px checkerboard is far below the fibre spacing: cell averages
    # concentrate near 0.5
    board = np.indices((64, 64)).sum(axis=0) % 2
    img = CartesianImage.from_array(board.astype(np.float64))
    cfg = DegradeConfig(noise=NoiseParams(enabled=False))
    out = downscale_voronoi(img, pattern_64, cfg)
    assert np.abs(out.values[out.mask] - 0.5).mean() < 0.1


def test_voronoi_preserves_global_mean(pattern_64, texture_64):
    img = CartesianImage.from_array(texture_64)
    cfg = DegradeConfig(noise=NoiseParams(enabled=False))
    out = downscale_voronoi(img, pattern_64, cfg)
    m = out.mask
    assert out.values[m].mean() == pytest.approx(img.values[m].mean(), rel=0.02)


def test_voronoi_commutes_with_intensity_inversion(pattern_64, texture_64):
    cfg = DegradeConfig(noise=NoiseParams(enabled=False))
    img = CartesianImage.from_array(texture_64)
    inv = CartesianImage.from_array(1.0 - texture_64)
    a = downscale_voronoi(inv, pattern_64, cfg)
    b = downscale_voronoi(img, pattern_64, cfg)
    np.testing.assert_allclose(a.values[a.mask], 1.0 - b.values[b.mask], atol=1e-6)


def test_voronoi_deterministic(pattern_32, rng):
    img = CartesianImage.from_array(rng.random((32, 32)))
    cfg = DegradeConfig(seed=12)
    a = downscale_voronoi(img, pattern_32, cfg)
    b = downscale_voronoi(img, pattern_32, cfg)
    np.testing.assert_array_equal(a.values, b.values)


def test_voronoi_degrader_rejects_size_mismatch(pattern_32, rng):
    degrader = VoronoiDegrader(pattern_32, 32, 32)
    with pytest.raises(ConfigurationError):
        degrader.signals(CartesianImage.from_array(rng.random((16, 16))))


# ---------------------------------------------------------------------------
# Bicubic kernel


def test_bicubic_minimum_size(rng):
    cfg = DegradeConfig(kernel="bicubic", bicubic_scale=3,
                        noise=NoiseParams(enabled=False))
    with pytest.raises(ConfigurationError):
        downscale_bicubic(CartesianImage.from_array(rng.random((11, 11))), cfg)
    out = downscale_bicubic(CartesianImage.from_array(rng.random((12, 12))), cfg)
    assert out.shape == (12, 12)


def test_bicubic_constant_noise_free(rng):
    cfg = DegradeConfig(kernel="bicubic", noise=NoiseParams(enabled=False))
    img = CartesianImage.from_array(np.full((24, 24), 0.3))
    out = downscale_bicubic(img, cfg)
    np.testing.assert_allclose(out.values, 0.3, atol=1e-6)


def test_bicubic_blurs_detail(rng):
    sharp = make_texture(48, seed=3, sharp=True)
    img = CartesianImage.from_array(sharp)
    cfg = DegradeConfig(kernel="bicubic", noise=NoiseParams(enabled=False))
    out = downscale_bicubic(img, cfg)
    assert out.values.std() < img.values.std()
    assert psnr(img, out) < 60.0  # genuinely lossy


def test_degrade_frame_dispatch(pattern_32, rng):
    img = CartesianImage.from_array(rng.random((32, 32)))
    v = degrade_frame(img, pattern_32, DegradeConfig(kernel="voronoi", seed=1))
    b = degrade_frame(img, pattern_32, DegradeConfig(kernel="bicubic", seed=1))
    assert v.shape == b.shape == (32, 32)
    assert np.abs(v.values - b.values).max() > 0


def test_degrade_config_validation():
    with pytest.raises(ConfigurationError):
        DegradeConfig(kernel="nearest").validate()
    with pytest.raises(ConfigurationError):
        DegradeConfig(kernel="bicubic", bicubic_scale=1).validate()
    with pytest.raises(ConfigurationError):
        DegradeConfig(kernel="bicubic", bicubic_scale=2.5).validate()
    DegradeConfig().validate()
    cfg = DegradeConfig(seed=1).with_seed(5)
    assert cfg.seed == 5


# ---------------------------------------------------------------------------
# Simulator


def test_simulate_dense_pattern_identity():
    # a fibre on every pixel centre degenerates to the identity (noise off)
    xs = np.arange(20) + 0.5
    gx, gy = np.meshgrid(xs, xs)
    from fibresr.geometry import FibrePattern

    pattern = FibrePattern(
        positions=np.column_stack([gx.ravel(), gy.ravel()]),
        fov_center=np.array([10.0, 10.0]), fov_radius=15.0, width=20, height=20,
    )
    hr = CartesianImage.from_array(make_texture(20, seed=1))
    frame, ref = simulate_pcle(hr, pattern, NoiseParams(enabled=False), seed=0)
    np.testing.assert_allclose(frame.values[frame.mask], ref.values[ref.mask],
                               atol=1e-6)


def test_simulate_psnr_decreases_with_spacing():
    hr = CartesianImage.from_array(make_texture(64, seed=2, sharp=True))
    noise = NoiseParams(enabled=False)
    tight = generate_quasi_hex_pattern(64, 64, spacing=4.0, seed=1)
    loose = generate_quasi_hex_pattern(64, 64, spacing=8.0, seed=1)
    f_tight, r_tight = simulate_pcle(hr, tight, noise, seed=0)
    f_loose, r_loose = simulate_pcle(hr, loose, noise, seed=0)
    assert psnr(r_tight, f_tight) > psnr(r_loose, f_loose)


def test_simulate_noise_lowers_psnr(pattern_64, texture_64):
    hr = CartesianImage.from_array(texture_64)
    f_clean, r_clean = simulate_pcle(hr, pattern_64, NoiseParams(enabled=False), seed=4)
    f_noisy, r_noisy = simulate_pcle(hr, pattern_64, NoiseParams(sigma_add=0.03), seed=4)
    assert psnr(r_noisy, f_noisy) < psnr(r_clean, f_clean)


def test_simulate_reference_masked_to_fov(pattern_64, texture_64):
    hr = CartesianImage.from_array(texture_64)
    frame, ref = simulate_pcle(hr, pattern_64, SYNTHETIC_NOISE, seed=0)
    np.testing.assert_array_equal(frame.mask, ref.mask)
    assert (ref.values[~ref.mask] == 0.0).all()
    np.testing.assert_allclose(ref.values[ref.mask], hr.values[ref.mask], atol=1e-7)
