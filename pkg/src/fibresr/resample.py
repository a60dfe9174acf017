"""Separable bicubic resampling (Catmull-Rom, a = -0.5).

Output pixel centres map to input coordinates via
``x_in = (x_out + 0.5) * in_size / out_size - 0.5``. When downscaling, the
kernel support is widened by the scale factor (antialiasing); taps falling
outside the image are dropped and the remaining weights renormalised, which
matches the behaviour of common high-quality resizers.

A mask-aware variant resamples ``values * mask`` and ``mask`` separately and
divides (normalised convolution), so invalid pixels never bleed into the
valid region of the result.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError

_A = -0.5  # Catmull-Rom


def _cubic_kernel(t: np.ndarray) -> np.ndarray:
    t = np.abs(t)
    t2 = t * t
    t3 = t2 * t
    out = np.where(
        t <= 1.0,
        (_A + 2.0) * t3 - (_A + 3.0) * t2 + 1.0,
        np.where(t < 2.0, _A * (t3 - 5.0 * t2 + 8.0 * t - 4.0), 0.0),
    )
    return out


def _resize_weights(in_size: int, out_size: int, antialias: bool):
    """Per-output-pixel tap indices and normalised weights for one axis."""
    scale = in_size / out_size
    filterscale = max(scale, 1.0) if antialias else 1.0
    support = 2.0 * filterscale
    centers = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    lo = np.floor(centers - support + 0.5).astype(np.int64)
    hi = np.ceil(centers + support - 0.5).astype(np.int64)
    n_taps = int((hi - lo).max()) + 1
    taps = lo[:, None] + np.arange(n_taps)[None, :]
    w = _cubic_kernel((taps - centers[:, None]) / filterscale)
    valid = (taps >= 0) & (taps < in_size)
    w = np.where(valid, w, 0.0)
    norm = w.sum(axis=1, keepdims=True)
    # a zero row cannot occur: support >= 2 always covers an in-range tap
    w = w / norm
    taps = np.clip(taps, 0, in_size - 1)
    return taps, w


def _resize_axis(values: np.ndarray, out_size: int, axis: int, antialias: bool):
    in_size = values.shape[axis]
    if in_size == out_size:
        return values.copy()
    taps, w = _resize_weights(in_size, out_size, antialias)
    moved = np.moveaxis(values, axis, 0)
    gathered = moved[taps]  # (out_size, n_taps, ...)
    out = np.einsum("ot...,ot->o...", gathered, w)
    return np.moveaxis(out, 0, axis)


def resize_bicubic(
    values: np.ndarray,
    out_height: int,
    out_width: int,
    antialias: bool = True,
) -> np.ndarray:
    """Resize a 2-D array with bicubic interpolation (float64 output).

    ``antialias`` widens the kernel when downscaling; it has no effect when
    upscaling. Values are not clipped.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ConfigurationError("resize_bicubic expects a 2-D array")
    if out_height < 1 or out_width < 1:
        raise ConfigurationError(f"invalid output size {out_height}x{out_width}")
    out = _resize_axis(values, out_width, axis=1, antialias=antialias)
    out = _resize_axis(out, out_height, axis=0, antialias=antialias)
    return out


def resize_bicubic_masked(
    values: np.ndarray,
    mask: np.ndarray,
    out_height: int,
    out_width: int,
    antialias: bool = True,
    coverage_threshold: float = 0.05,
) -> tuple[np.ndarray, np.ndarray]:
    """Mask-aware bicubic resize via normalised convolution.

    Returns (values, mask) on the output grid. Output pixels whose mask
    coverage falls below ``coverage_threshold`` are zeroed and masked out.
    """
    mask_f = np.asarray(mask, dtype=np.float64)
    num = resize_bicubic(np.asarray(values, np.float64) * mask_f, out_height, out_width, antialias)
    den = resize_bicubic(mask_f, out_height, out_width, antialias)
    out_mask = den > coverage_threshold
    out = np.zeros_like(num)
    out[out_mask] = num[out_mask] / den[out_mask]
    return out, out_mask
