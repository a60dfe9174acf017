"""Estimator adapters: scikit-learn compatibility, fit/predict, validation."""

from __future__ import annotations

import numpy as np
import pytest
from sklearn.base import clone

from fibresr.degrade import NoiseParams
from fibresr.errors import ConfigurationError
from fibresr.estimators import (
    FibreBundleSimulator,
    SupervisedSuperResolver,
    ZeroShotSuperResolver,
    _resolve_noise,
)
from fibresr.geometry import generate_quasi_hex_pattern
from fibresr.images import CartesianImage
from fibresr.validation import (
    check_fitted,
    check_frames,
    check_image,
    check_pairs,
    check_pattern,
)

from conftest import make_texture

MICRO = dict(epochs=2, eval_every=1, batch_size=2, crop_size=16, seed=7)


@pytest.fixture(scope="module")
def small_video():
    pattern = generate_quasi_hex_pattern(48, 48, seed=13)
    rng = np.random.default_rng(5)
    base = make_texture(48, seed=21)
    frames = [CartesianImage.from_array(
        np.clip(base + 0.01 * rng.standard_normal(base.shape), 0, 1))
        for _ in range(3)]
    return frames, pattern


# ---------------------------------------------------------------- sklearn API

def test_get_set_params_round_trip():
    est = ZeroShotSuperResolver(epochs=12, lr0=2e-3)
    params = est.get_params()
    assert params["epochs"] == 12
    assert params["lr0"] == 2e-3
    est.set_params(batch_size=4)
    assert est.batch_size == 4
    with pytest.raises(ValueError):
        est.set_params(bogus=1)


def test_clone_preserves_params():
    est = SupervisedSuperResolver(**MICRO, kernel="bicubic")
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert twin is not est


def test_repr_mentions_changed_params():
    est = ZeroShotSuperResolver(epochs=5)
    assert "epochs=5" in repr(est)


# ------------------------------------------------------------- zero-shot path

def test_zero_shot_fit_predict(small_video):
    frames, pattern = small_video
    est = ZeroShotSuperResolver(**MICRO)
    out = est.fit_predict(frames, pattern=pattern)
    assert len(out) == len(frames)
    for o, f in zip(out, frames):
        assert o.shape == f.shape
        assert np.array_equal(o.mask, f.mask)
    assert est.n_frames_ == 3
    assert len(est.result_.trace) == MICRO["epochs"]


def test_zero_shot_requires_pattern(small_video):
    frames, _ = small_video
    with pytest.raises(ConfigurationError, match="pattern"):
        ZeroShotSuperResolver(**MICRO).fit(frames)


def test_predict_before_fit_raises(small_video):
    frames, _ = small_video
    with pytest.raises(ConfigurationError, match="not fitted"):
        ZeroShotSuperResolver(**MICRO).predict(frames)


def test_zero_shot_deterministic(small_video):
    frames, pattern = small_video
    a = ZeroShotSuperResolver(**MICRO).fit(frames, pattern=pattern)
    b = ZeroShotSuperResolver(**MICRO).fit(frames, pattern=pattern)
    for wa, wb in zip(a.params_.weights, b.params_.weights):
        assert np.array_equal(wa, wb)
    for ba, bb in zip(a.params_.biases, b.params_.biases):
        assert np.array_equal(ba, bb)


def test_zero_shot_accepts_array_stack(small_video):
    frames, pattern = small_video
    stack = np.stack([f.values for f in frames])
    est = ZeroShotSuperResolver(**MICRO).fit(stack, pattern=pattern)
    out = est.predict(frames[0].values)
    assert len(out) == 1 and out[0].shape == frames[0].shape


def test_bad_hyperparameters_fail_at_fit(small_video):
    frames, pattern = small_video
    est = ZeroShotSuperResolver(epochs=10, eval_every=3)
    with pytest.raises(ConfigurationError):
        est.fit(frames, pattern=pattern)


def test_transform_is_predict(small_video):
    frames, pattern = small_video
    est = ZeroShotSuperResolver(**MICRO).fit(frames[:1], pattern=pattern)
    p = est.predict(frames[:1])
    t = est.transform(frames[:1])
    assert np.array_equal(p[0].values, t[0].values)


# ------------------------------------------------------------ supervised path

def test_supervised_fit_both_input_forms(small_video):
    frames, _ = small_video
    lows = [f.values for f in frames]
    highs = [np.clip(f.values * 1.02, 0, 1) for f in frames]
    a = SupervisedSuperResolver(**MICRO).fit(list(zip(lows, highs)))
    b = SupervisedSuperResolver(**MICRO).fit(lows, highs)
    assert a.n_pairs_ == b.n_pairs_ == 3
    for wa, wb in zip(a.params_.weights, b.params_.weights):
        assert np.array_equal(wa, wb)


def test_supervised_rejects_mismatched_xy(small_video):
    frames, _ = small_video
    with pytest.raises(ConfigurationError):
        SupervisedSuperResolver(**MICRO).fit(frames, frames[:2])


# -------------------------------------------------------------- bundle imager

def test_simulator_fit_builds_pattern():
    from fibresr.reconstruct import mean_pixels_per_fibre

    sim = FibreBundleSimulator(size=48, seed=3).fit()
    assert sim.pattern_.width == 48
    assert 6.0 <= mean_pixels_per_fibre(sim.pattern_) <= 8.0


def test_simulator_adopts_given_pattern(small_video):
    _, pattern = small_video
    sim = FibreBundleSimulator().fit(pattern=pattern)
    assert sim.pattern_ is pattern


def test_simulator_simulate_and_transform(small_video):
    frames, pattern = small_video
    clean = frames[0]
    sim = FibreBundleSimulator(seed=4).fit(pattern=pattern)
    sim_frames, refs = sim.simulate([clean, clean])
    assert len(sim_frames) == len(refs) == 2
    assert sim_frames[0].shape == clean.shape
    # the reference is the clean image held to the field of view
    assert np.array_equal(refs[0].mask, sim_frames[0].mask)
    # per-image seeds: the two noisy acquisitions differ
    assert not np.array_equal(sim_frames[0].values, sim_frames[1].values)
    only = sim.transform([clean])
    assert isinstance(only, list) and only[0].shape == clean.shape


def test_simulator_noise_off_is_deterministic(small_video):
    frames, pattern = small_video
    sim = FibreBundleSimulator(noise=None).fit(pattern=pattern)
    a = sim.transform(frames[:1])[0]
    b = sim.transform(frames[:1])[0]
    assert np.array_equal(a.values, b.values)


def test_simulator_requires_fit(small_video):
    frames, _ = small_video
    with pytest.raises(ConfigurationError, match="not fitted"):
        FibreBundleSimulator().transform(frames[:1])


# ------------------------------------------------------------------ noise arg

def test_resolve_noise_routes():
    assert _resolve_noise(None).enabled is False
    synth = _resolve_noise("synthetic")
    assert synth.sigma_add == 0.03 and synth.sigma_mult == 0.05
    orig = _resolve_noise("original")
    assert orig.sigma_add == 0.1 and orig.sigma_mult == 0.5
    params = NoiseParams(sigma_add=0.2, sigma_mult=0.1)
    assert _resolve_noise(params) is params
    with pytest.raises(ConfigurationError):
        _resolve_noise("loud")
    with pytest.raises(ConfigurationError):
        _resolve_noise(0.5)


# ---------------------------------------------------------- validation layer

def test_check_image_coercion():
    arr = np.full((4, 4), 0.25)
    img = check_image(arr)
    assert isinstance(img, CartesianImage) and img.shape == (4, 4)
    with pytest.raises(ConfigurationError):
        check_image(np.zeros(5))


def test_check_frames_forms(small_video):
    frames, _ = small_video
    assert len(check_frames(frames[0])) == 1
    assert len(check_frames(frames[0].values)) == 1
    assert len(check_frames(np.stack([f.values for f in frames]))) == 3
    with pytest.raises(ConfigurationError):
        check_frames([])
    with pytest.raises(ConfigurationError):
        check_frames([np.zeros((4, 4)), np.zeros((5, 5))])
    with pytest.raises(ConfigurationError):
        check_frames(np.zeros((2, 2, 2, 2)))
    with pytest.raises(ConfigurationError):
        check_frames(7)


def test_check_pairs_forms():
    lr, hr = np.zeros((4, 4)), np.ones((4, 4))
    assert len(check_pairs([(lr, hr)])) == 1
    with pytest.raises(ConfigurationError):
        check_pairs([(lr,)])
    with pytest.raises(ConfigurationError):
        check_pairs([])


def test_check_pattern_path_round_trip(tmp_path, small_video):
    _, pattern = small_video
    path = tmp_path / "p.json"
    pattern.save(path)
    loaded = check_pattern(str(path))
    assert loaded.width == pattern.width
    assert np.allclose(loaded.positions, pattern.positions)
    with pytest.raises(ConfigurationError):
        check_pattern(42)


def test_check_fitted_message():
    est = ZeroShotSuperResolver()
    with pytest.raises(ConfigurationError, match="ZeroShotSuperResolver"):
        check_fitted(est, "params_")
