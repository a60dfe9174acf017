"""Estimator-style adapters over the functional core.

These follow the scikit-learn conventions — constructor stores
hyper-parameters verbatim, ``fit`` validates and learns, fitted state lives
in trailing-underscore attributes, ``get_params``/``set_params`` work for
grid search and cloning — so the models compose with standard tooling.
The heavy lifting stays in the functional modules; the adapters only
translate inputs and hold results.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator

from .degrade import DegradeConfig, NOISE_PRESETS, NoiseParams, simulate_pcle
from .errors import ConfigurationError
from .geometry import generate_quasi_hex_pattern
from .loss import LossConfig
from .validation import (
    check_fitted,
    check_frames,
    check_pairs,
    check_pattern,
)
from .zssr import (
    ScheduleConfig,
    TrainConfig,
    predict_median8,
    train_supervised,
    train_zero_shot,
)


def _resolve_noise(noise) -> NoiseParams:
    if noise is None:
        return NoiseParams(enabled=False)
    if isinstance(noise, NoiseParams):
        return noise
    if isinstance(noise, str):
        if noise not in NOISE_PRESETS:
            raise ConfigurationError(
                f"unknown noise preset {noise!r}; choose from {sorted(NOISE_PRESETS)}"
            )
        return NOISE_PRESETS[noise]
    raise ConfigurationError(f"noise must be None, a preset name, or NoiseParams")


class _SuperResolverBase(BaseEstimator):
    """Shared hyper-parameters and prediction path of both resolvers."""

    def __init__(
        self,
        epochs=1000,
        eval_every=100,
        batch_size=8,
        crop_size=340,
        frames_fraction=0.1,
        kernel="voronoi",
        bicubic_scale=3,
        noise="synthetic",
        lambda_l1=5.0,
        perceptual=True,
        extractor_seed=0,
        lr0=1e-3,
        weight_decay=0.0,
        seed=0,
    ):
        self.epochs = epochs
        self.eval_every = eval_every
        self.batch_size = batch_size
        self.crop_size = crop_size
        self.frames_fraction = frames_fraction
        self.kernel = kernel
        self.bicubic_scale = bicubic_scale
        self.noise = noise
        self.lambda_l1 = lambda_l1
        self.perceptual = perceptual
        self.extractor_seed = extractor_seed
        self.lr0 = lr0
        self.weight_decay = weight_decay
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        config = TrainConfig(
            epochs=self.epochs,
            eval_every=self.eval_every,
            batch_size=self.batch_size,
            crop_size=self.crop_size,
            frames_fraction=self.frames_fraction,
            weight_decay=self.weight_decay,
            degrade=DegradeConfig(
                kernel=self.kernel,
                bicubic_scale=self.bicubic_scale,
                noise=_resolve_noise(self.noise),
                seed=self.seed,
            ),
            loss=LossConfig(
                lambda_l1=self.lambda_l1,
                perceptual=self.perceptual,
                extractor_seed=self.extractor_seed,
            ),
            schedule=ScheduleConfig(lr0=self.lr0),
            seed=self.seed,
        )
        config.validate()
        return config

    def predict(self, X):
        """Super-resolve each frame with the trained network."""
        check_fitted(self, "params_")
        frames = check_frames(X)
        return [predict_median8(self.params_, f) for f in frames]

    def transform(self, X):
        return self.predict(X)


class ZeroShotSuperResolver(_SuperResolverBase):
    """Per-video self-supervised super-resolution.

    ``fit`` trains one network on the given video's own frames (no external
    data); ``predict`` super-resolves frames with it. The fibre pattern of
    the acquisition must be passed to ``fit``.
    """

    def fit(self, X, y=None, pattern=None):
        if pattern is None:
            raise ConfigurationError("fit requires the acquisition's fibre pattern")
        frames = check_frames(X)
        pat = check_pattern(pattern)
        config = self._train_config()
        result = train_zero_shot(frames, pat, config)
        self.params_ = result.params
        self.result_ = result
        self.pattern_ = pat
        self.n_frames_ = len(frames)
        return self

    def fit_predict(self, X, y=None, pattern=None):
        return self.fit(X, pattern=pattern).predict(X)


class SupervisedSuperResolver(_SuperResolverBase):
    """Supervised single-image super-resolution on (LR, HR) pairs.

    ``fit`` accepts either a sequence of (lr, hr) tuples as X, or parallel
    sequences X (low-res) and y (high-res).
    """

    def fit(self, X, y=None):
        pairs = check_pairs(X, y)
        config = self._train_config()
        result = train_supervised(pairs, config)
        self.params_ = result.params
        self.result_ = result
        self.n_pairs_ = len(pairs)
        return self


class FibreBundleSimulator(BaseEstimator):
    """Synthesise bundle acquisitions of clean images.

    ``fit`` builds (or adopts) the fibre pattern; ``transform`` degrades
    each input image to a simulated acquisition. ``simulate`` additionally
    returns the field-of-view-masked references for metric computation.
    """

    def __init__(self, size=512, spacing=None, jitter_frac=0.2, noise="synthetic", seed=0):
        self.size = size
        self.spacing = spacing
        self.jitter_frac = jitter_frac
        self.noise = noise
        self.seed = seed

    def fit(self, X=None, y=None, pattern=None):
        if pattern is not None:
            self.pattern_ = check_pattern(pattern)
        else:
            self.pattern_ = generate_quasi_hex_pattern(
                self.size, self.size, self.spacing, self.jitter_frac, self.seed
            )
        return self

    def simulate(self, X):
        """Degrade each image; returns (frames, references)."""
        check_fitted(self, "pattern_")
        images = check_frames(X, "images")
        noise = _resolve_noise(self.noise)
        frames, refs = [], []
        for i, img in enumerate(images):
            frame, ref = simulate_pcle(img, self.pattern_, noise, seed=self.seed + i)
            frames.append(frame)
            refs.append(ref)
        return frames, refs

    def transform(self, X):
        frames, _ = self.simulate(X)
        return frames

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, **fit_params).transform(X)
