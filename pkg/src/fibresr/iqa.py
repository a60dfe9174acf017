"""Reference image quality metrics with mask support.

All metrics compare a prediction to a reference over a validity mask (both
images' masks, intersected with an optional explicit one) and compute in
float64. Windowed metrics (SSIM, GMSD) only score windows that lie fully
inside the mask, so partially valid windows never contribute.

Conventions:

* PSNR uses peak 1.0 and is capped at 100 dB; identical inputs score the cap.
* SSIM uses an 11x11 Gaussian window (sigma = 1.5), K1 = 0.01, K2 = 0.03,
  dynamic range L = 1, and Gaussian-weighted (population) moments.
* GMSD uses Prewitt gradients scaled by 1/3, c = 0.0026, and is the
  population standard deviation of the similarity map; lower is better and
  identical inputs score 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError
from .images import CartesianImage

PSNR_CAP = 100.0

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_L = 1.0

_GMSD_C = 0.0026

# higher_better flag per metric name; used for ordering checks and reports
METRIC_SENSES = {"psnr": True, "ssim": True, "gmsd": False, "l1": False}


def _resolve_mask(ref, pred, mask):
    if isinstance(ref, CartesianImage):
        ref_vals, ref_mask = ref.values, ref.mask
    else:
        ref_vals = np.asarray(ref)
        ref_mask = np.ones(ref_vals.shape, dtype=bool)
    if isinstance(pred, CartesianImage):
        pred_vals, pred_mask = pred.values, pred.mask
    else:
        pred_vals = np.asarray(pred)
        pred_mask = np.ones(pred_vals.shape, dtype=bool)
    if ref_vals.shape != pred_vals.shape:
        raise ConfigurationError(
            f"metric inputs differ in shape: {ref_vals.shape} vs {pred_vals.shape}"
        )
    m = ref_mask & pred_mask
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != ref_vals.shape:
            raise ConfigurationError("explicit mask shape mismatch")
        m = m & mask
    if not m.any():
        raise ConfigurationError("empty evaluation mask")
    return ref_vals.astype(np.float64), pred_vals.astype(np.float64), m


def psnr(ref, pred, mask=None) -> float:
    """Peak signal-to-noise ratio in dB over the mask (peak 1.0, cap 100)."""
    r, p, m = _resolve_mask(ref, pred, mask)
    mse = float(((r - p) ** 2)[m].mean())
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def l1_metric(ref, pred, mask=None) -> float:
    """Mean absolute error over the mask (lower is better)."""
    r, p, m = _resolve_mask(ref, pred, mask)
    return float(np.abs(r - p)[m].mean())


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    g /= g.sum()
    return g


def _filter2_sep(values: np.ndarray, kernel1d: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(values, kernel1d, axis=0, mode="reflect")
    return ndimage.correlate1d(out, kernel1d, axis=1, mode="reflect")


def ssim(ref, pred, mask=None) -> float:
    """Mean structural similarity over fully masked windows."""
    r, p, m = _resolve_mask(ref, pred, mask)
    if min(r.shape) < _SSIM_WINDOW:
        raise ConfigurationError(
            f"image smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} SSIM window"
        )
    g = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    mu_r = _filter2_sep(r, g)
    mu_p = _filter2_sep(p, g)
    rr = _filter2_sep(r * r, g)
    pp = _filter2_sep(p * p, g)
    rp = _filter2_sep(r * p, g)
    var_r = rr - mu_r * mu_r
    var_p = pp - mu_p * mu_p
    cov = rp - mu_r * mu_p
    c1 = (_SSIM_K1 * _SSIM_L) ** 2
    c2 = (_SSIM_K2 * _SSIM_L) ** 2
    ssim_map = ((2 * mu_r * mu_p + c1) * (2 * cov + c2)) / (
        (mu_r * mu_r + mu_p * mu_p + c1) * (var_r + var_p + c2)
    )
    valid = ndimage.binary_erosion(
        m, structure=np.ones((_SSIM_WINDOW, _SSIM_WINDOW), dtype=bool), border_value=0
    )
    if not valid.any():
        raise ConfigurationError("mask too small: no fully masked SSIM window")
    return float(ssim_map[valid].mean())


_PREWITT_X = np.array([[1, 0, -1], [1, 0, -1], [1, 0, -1]], dtype=np.float64) / 3.0
_PREWITT_Y = _PREWITT_X.T


def _gradient_magnitude(values: np.ndarray) -> np.ndarray:
    gx = ndimage.correlate(values, _PREWITT_X, mode="reflect")
    gy = ndimage.correlate(values, _PREWITT_Y, mode="reflect")
    return np.sqrt(gx * gx + gy * gy)


def gmsd(ref, pred, mask=None) -> float:
    """Gradient-magnitude similarity deviation over fully masked windows."""
    r, p, m = _resolve_mask(ref, pred, mask)
    if min(r.shape) < 3:
        raise ConfigurationError("image smaller than the 3x3 gradient window")
    gm_r = _gradient_magnitude(r)
    gm_p = _gradient_magnitude(p)
    gms = (2.0 * gm_r * gm_p + _GMSD_C) / (gm_r * gm_r + gm_p * gm_p + _GMSD_C)
    valid = ndimage.binary_erosion(
        m, structure=np.ones((3, 3), dtype=bool), border_value=0
    )
    if not valid.any():
        raise ConfigurationError("mask too small: no fully masked gradient window")
    vals = gms[valid]
    return float(vals.std())


METRIC_FUNCTIONS = {"psnr": psnr, "ssim": ssim, "gmsd": gmsd, "l1": l1_metric}


def evaluate_pair(ref, pred, mask=None) -> dict[str, float]:
    """All four metrics for one reference/prediction pair."""
    return {name: fn(ref, pred, mask) for name, fn in METRIC_FUNCTIONS.items()}


@dataclass
class MetricReport:
    """Per-frame metric rows plus aggregate helpers."""

    rows: list[dict] = field(default_factory=list)

    def add(self, frame: str, metrics: dict[str, float]) -> None:
        row = {"frame": frame}
        row.update(metrics)
        self.rows.append(row)

    def values(self, metric: str) -> np.ndarray:
        return np.array([row[metric] for row in self.rows], dtype=np.float64)

    def summary(self) -> dict[str, dict[str, float]]:
        out = {}
        for metric in METRIC_FUNCTIONS:
            if self.rows and metric in self.rows[0]:
                v = self.values(metric)
                out[metric] = {
                    "mean": float(v.mean()),
                    "std": float(v.std(ddof=1)) if v.size > 1 else 0.0,
                    "n": int(v.size),
                }
        return out

    def to_csv(self, path) -> None:
        metrics = [m for m in METRIC_FUNCTIONS if self.rows and m in self.rows[0]]
        lines = [",".join(["frame"] + metrics)]
        for row in self.rows:
            lines.append(
                ",".join([str(row["frame"])] + [f"{row[m]:.10g}" for m in metrics])
            )
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text("\n".join(lines) + "\n")

    def save_summary(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.summary(), indent=1, sort_keys=True))
