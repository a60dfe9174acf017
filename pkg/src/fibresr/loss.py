"""Training loss: perceptual feature distance plus weighted L1.

The perceptual term follows the learned-similarity construction: run both
images through a fixed convolutional feature extractor, unit-normalise each
feature vector across channels, weight the difference per channel, and
average the squared L2 norm spatially, summing over tap layers:

    d(ref, pred) = sum_l (1 / (H_l * W_l)) * sum_{h,w} || w_l (.) (f_hat_ref
                   - f_hat_pred) ||_2^2

The extractor is pluggable. The builtin one is a fixed randomly initialised
conv stack (it is never trained); a pretrained deep feature stack can be
substituted through the same interface by loading a weights file. Feature
taps sit before each stage's ReLU so the channel vectors are almost surely
nonzero, which keeps the normalisation smooth.

The total loss is ``perceptual + lambda_l1 * L1`` and both terms return the
exact gradient with respect to the prediction; the L1 subgradient at zero is
taken as 0.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .convops import conv2d_backward, conv2d_forward
from .errors import CheckpointError, ConfigurationError
from .network import _read_array, _write_array

_NORM_EPS = 1e-10

EXTRACTOR_MAGIC = b"FBSRFEX1"
EXTRACTOR_VERSION = 1

# builtin extractor layout: (out_channels, stride) per stage, 3x3 kernels
_BUILTIN_STAGES = ((16, 1), (32, 2), (64, 2))
_BUILTIN_IN_CHANNELS = 3
MIN_EXTRACTOR_INPUT = 8


@dataclass
class FeatureExtractor:
    """Fixed conv stack with per-stage channel weights for the perceptual term."""

    weights: list[np.ndarray]  # (O, C, 3, 3) per stage
    biases: list[np.ndarray]
    strides: list[int]
    channel_weights: list[np.ndarray]  # (O,) per stage, non-negative

    def validate(self) -> None:
        n = len(self.weights)
        if not (len(self.biases) == len(self.strides) == len(self.channel_weights) == n):
            raise ConfigurationError("inconsistent extractor stage lists")
        c = _BUILTIN_IN_CHANNELS
        for i, (w, b, cw) in enumerate(zip(self.weights, self.biases, self.channel_weights)):
            if w.ndim != 4 or w.shape[1] != c or w.shape[2:] != (3, 3):
                raise ConfigurationError(f"extractor stage {i} has bad shape {w.shape}")
            if b.shape != (w.shape[0],) or cw.shape != (w.shape[0],):
                raise ConfigurationError(f"extractor stage {i} bias/weight mismatch")
            if cw.min() < 0:
                raise ConfigurationError("channel weights must be non-negative")
            c = w.shape[0]

    @property
    def min_input(self) -> int:
        return MIN_EXTRACTOR_INPUT

    def feature_shapes(self, h: int, w: int) -> list[tuple[int, int, int]]:
        """(channels, height, width) of each tap for an h x w input."""
        shapes = []
        for wgt, s in zip(self.weights, self.strides):
            h = (h - 1) // s + 1
            w = (w - 1) // s + 1
            shapes.append((int(wgt.shape[0]), h, w))
        return shapes


def build_extractor(seed: int = 0) -> FeatureExtractor:
    """Deterministic builtin extractor: He-init convs, small random biases,
    uniform channel weights. The same seed always yields the same stack."""
    rng = np.random.default_rng(seed)
    weights, biases, strides, cws = [], [], [], []
    c = _BUILTIN_IN_CHANNELS
    for out_c, stride in _BUILTIN_STAGES:
        fan_in = c * 9
        weights.append(
            (rng.standard_normal((out_c, c, 3, 3)) * np.sqrt(2.0 / fan_in)).astype(np.float32)
        )
        biases.append((rng.standard_normal(out_c) * 0.1).astype(np.float32))
        strides.append(stride)
        cws.append(rng.uniform(0.0, 1.0, size=out_c).astype(np.float32))
        c = out_c
    ext = FeatureExtractor(weights=weights, biases=biases, strides=strides, channel_weights=cws)
    ext.validate()
    return ext


def save_extractor(path, extractor: FeatureExtractor) -> None:
    extractor.validate()
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(extractor.weights)))
    for w, b, s, cw in zip(
        extractor.weights, extractor.biases, extractor.strides, extractor.channel_weights
    ):
        buf.write(struct.pack("<I", s))
        _write_array(buf, w)
        _write_array(buf, b)
        _write_array(buf, cw)
    payload = buf.getvalue()
    from pathlib import Path

    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "wb") as fh:
        fh.write(EXTRACTOR_MAGIC)
        fh.write(struct.pack("<HQ", EXTRACTOR_VERSION, len(payload)))
        fh.write(hashlib.sha256(payload).digest())
        fh.write(payload)


def load_extractor(path) -> FeatureExtractor:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 50 or blob[:8] != EXTRACTOR_MAGIC:
        raise CheckpointError(f"{path}: not an extractor weights file")
    version, payload_len = struct.unpack("<HQ", blob[8:18])
    if version != EXTRACTOR_VERSION:
        raise CheckpointError(f"{path}: unsupported extractor version {version}")
    payload = blob[50:]
    if len(payload) != payload_len or hashlib.sha256(payload).digest() != blob[18:50]:
        raise CheckpointError(f"{path}: corrupt extractor file")
    buf = io.BytesIO(payload)
    (n,) = struct.unpack("<I", buf.read(4))
    weights, biases, strides, cws = [], [], [], []
    for _ in range(n):
        (s,) = struct.unpack("<I", buf.read(4))
        strides.append(s)
        weights.append(_read_array(buf))
        biases.append(_read_array(buf))
        cws.append(_read_array(buf))
    ext = FeatureExtractor(weights=weights, biases=biases, strides=strides, channel_weights=cws)
    ext.validate()
    return ext


@dataclass(frozen=True)
class LossConfig:
    """Loss term weights and the source of the perceptual feature stack.

    ``extractor_path`` (a saved weights file) takes precedence over
    ``extractor_seed`` (the builtin random stack); with ``perceptual=False``
    neither is consulted and the loss reduces to weighted L1.
    """

    lambda_l1: float = 5.0
    perceptual: bool = True
    extractor_seed: int = 0
    extractor_path: str | None = None

    def validate(self) -> None:
        if not np.isfinite(self.lambda_l1) or self.lambda_l1 < 0:
            raise ConfigurationError(f"lambda_l1 must be >= 0, got {self.lambda_l1}")


def resolve_extractor(config: LossConfig) -> FeatureExtractor | None:
    """Materialise the feature extractor a LossConfig points at (or None)."""
    if not config.perceptual:
        return None
    if config.extractor_path:
        return load_extractor(config.extractor_path)
    return build_extractor(config.extractor_seed)


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ConfigurationError(f"loss input must be (H, W) or (B, H, W), got {x.shape}")
    return x


def l1_term(reference, prediction) -> float:
    """Mean absolute error between reference and prediction."""
    value, _ = l1_term_with_grad(reference, prediction)
    return value


def l1_term_with_grad(ref, pred) -> tuple[float, np.ndarray]:
    """Mean absolute error and its gradient w.r.t. ``pred``.

    The gradient at exact ties is 0 (sign(0) = 0).
    """
    ref_b = _as_batch(ref)
    pred_b = _as_batch(pred)
    if ref_b.shape != pred_b.shape:
        raise ConfigurationError(f"shape mismatch {ref_b.shape} vs {pred_b.shape}")
    diff = pred_b.astype(np.float64) - ref_b.astype(np.float64)
    value = float(np.abs(diff).mean())
    grad = np.sign(diff) / diff.size
    if np.asarray(pred).ndim == 2:
        grad = grad[0]
    return value, grad


def _extract_features(extractor: FeatureExtractor, x: np.ndarray, keep_cache: bool):
    """Run the conv stack; returns per-stage pre-activation taps (+ caches)."""
    taps, caches, relu_masks = [], [], []
    a = x
    for i, (w, b, s) in enumerate(
        zip(extractor.weights, extractor.biases, extractor.strides)
    ):
        z, cache = conv2d_forward(a, w.astype(x.dtype, copy=False), b.astype(x.dtype, copy=False), stride=s)
        taps.append(z)
        caches.append(cache if keep_cache else None)
        if i < len(extractor.weights) - 1:
            mask = z > 0
            a = z * mask
            relu_masks.append(mask if keep_cache else None)
    return taps, caches, relu_masks


def _normalise_channels(z: np.ndarray):
    """Unit-normalise feature vectors across the channel axis."""
    norm = np.sqrt((z * z).sum(axis=1, keepdims=True))
    denom = norm + _NORM_EPS
    return z / denom, norm, denom


def perceptual_term(extractor: FeatureExtractor, reference, prediction) -> float:
    """Perceptual feature distance between reference and prediction."""
    value, _ = perceptual_term_with_grad(extractor, reference, prediction)
    return value


def perceptual_term_with_grad(
    extractor: FeatureExtractor, ref, pred
) -> tuple[float, np.ndarray]:
    """Perceptual distance and its exact gradient w.r.t. ``pred``.

    Single-channel images are replicated to the extractor's three input
    channels. Raises ConfigurationError when the image is smaller than the
    extractor's minimum input size.
    """
    extractor.validate()
    ref_b = _as_batch(ref)
    pred_b = _as_batch(pred)
    if ref_b.shape != pred_b.shape:
        raise ConfigurationError(f"shape mismatch {ref_b.shape} vs {pred_b.shape}")
    bsz, h, w = pred_b.shape
    if h < extractor.min_input or w < extractor.min_input:
        raise ConfigurationError(
            f"image {h}x{w} below extractor minimum {extractor.min_input}"
        )
    dtype = pred_b.dtype if pred_b.dtype == np.float64 else np.float32
    xr = np.repeat(ref_b.astype(dtype)[:, None], _BUILTIN_IN_CHANNELS, axis=1)
    xp = np.repeat(pred_b.astype(dtype)[:, None], _BUILTIN_IN_CHANNELS, axis=1)

    taps_r, _, _ = _extract_features(extractor, xr, keep_cache=False)
    taps_p, caches, relu_masks = _extract_features(extractor, xp, keep_cache=True)

    total = 0.0
    stage_grads = []  # d(loss)/d(tap_p) per stage
    for z_r, z_p, cw in zip(taps_r, taps_p, extractor.channel_weights):
        f_r, _, _ = _normalise_channels(z_r)
        f_p, _, denom_p = _normalise_channels(z_p)
        cw_col = cw.astype(z_p.dtype)[None, :, None, None]
        d = cw_col * (f_r - f_p)
        hl, wl = z_p.shape[2], z_p.shape[3]
        total += float((d * d).sum() / (bsz * hl * wl))
        # gradient through f_p = z_p / (||z_p|| + eps):
        #   dL/df_p = -2 cw^2 (f_r - f_p) / (B*H*W)
        # and with u = dL/df_p:
        #   dL/dz_p = u / denom - z_p * (z_p . u) / (norm * denom^2)
        # the second term uses f_p / denom = z_p / (norm+eps)^2 / ... kept
        # in the norm-free form below to avoid dividing by a zero norm
        u = (-2.0 / (bsz * hl * wl)) * (cw_col * cw_col) * (f_r - f_p)
        dot = (z_p * u).sum(axis=1, keepdims=True)
        g = u / denom_p - f_p * dot / (denom_p * denom_p)
        stage_grads.append(g)

    # backpropagate stage gradients through the conv stack to the input
    gx = None
    for i in range(len(taps_p) - 1, -1, -1):
        g = stage_grads[i] if gx is None else stage_grads[i] + gx
        gx, _, _ = conv2d_backward(g, extractor.weights[i].astype(g.dtype), caches[i])
        if i > 0:
            gx = gx * relu_masks[i - 1]
    grad = gx.sum(axis=1)  # collapse the replicated channels
    if np.asarray(pred).ndim == 2:
        grad = grad[0]
    total_out = total
    return total_out, grad.astype(np.float64) if grad.dtype != np.float64 else grad


def total_loss(
    config: LossConfig,
    extractor: FeatureExtractor | None,
    reference,
    prediction,
) -> float:
    """Combined loss ``perceptual + lambda_l1 * L1``."""
    value, _ = total_loss_with_grad(config, extractor, reference, prediction)
    return value


def total_loss_with_grad(
    config: LossConfig,
    extractor: FeatureExtractor | None,
    ref,
    pred,
) -> tuple[float, np.ndarray]:
    """Combined loss and its exact gradient w.r.t. ``pred``."""
    config.validate()
    l1_val, l1_grad = l1_term_with_grad(ref, pred)
    if config.perceptual:
        if extractor is None:
            raise ConfigurationError("perceptual loss enabled but no extractor given")
        p_val, p_grad = perceptual_term_with_grad(extractor, ref, pred)
    else:
        p_val, p_grad = 0.0, np.zeros_like(l1_grad)
    value = p_val + config.lambda_l1 * l1_val
    grad = p_grad + config.lambda_l1 * l1_grad
    return value, grad
