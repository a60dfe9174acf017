"""Cartesian image container and grayscale PNG I/O.

Conventions used throughout the package:

* images are 2-D arrays indexed ``[row, col]``; the centre of pixel
  ``[j, i]`` sits at continuous coordinates ``(x, y) = (i + 0.5, j + 0.5)``
* pixel values are float32 in ``[0, 1]``; a boolean mask marks the valid
  field of view and out-of-mask pixels are stored as exact ``0.0``
* PNG files are 8- or 16-bit grayscale, normalised by the bit-depth maximum
  on load and quantised by rounding on save
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ImageIOError


@dataclass
class CartesianImage:
    """Float image in [0, 1] with a validity mask.

    Attributes
    ----------
    values : np.ndarray
        float32 array of shape (H, W); exact 0.0 outside the mask.
    mask : np.ndarray
        bool array of shape (H, W); True marks valid pixels.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        mask = np.ascontiguousarray(self.mask, dtype=bool)
        if values.ndim != 2:
            raise ValueError(f"image must be 2-D, got shape {values.shape}")
        if mask.shape != values.shape:
            raise ValueError(
                f"mask shape {mask.shape} != values shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("image contains non-finite values")
        masked = values[mask]
        if masked.size and (masked.min() < 0.0 or masked.max() > 1.0):
            raise ValueError("masked values outside [0, 1]; clip before construction")
        # storage rule: out-of-mask pixels are exactly zero
        if not mask.all():
            values = np.where(mask, values, np.float32(0.0))
        self.values = values
        self.mask = mask

    @classmethod
    def from_array(cls, values, mask=None, clip=False) -> "CartesianImage":
        """Build an image, optionally clipping masked values into [0, 1].

        ``clip=True`` is the clamping stage applied wherever continuous
        estimates (interpolation, network output) are materialised as images.
        """
        values = np.asarray(values, dtype=np.float32)
        if mask is None:
            mask = np.ones(values.shape, dtype=bool)
        if clip:
            values = np.clip(values, 0.0, 1.0)
        return cls(values=values, mask=np.asarray(mask, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def crop(self, top: int, left: int, height: int, width: int) -> "CartesianImage":
        if top < 0 or left < 0 or top + height > self.shape[0] or left + width > self.shape[1]:
            raise ValueError("crop window exceeds image bounds")
        return CartesianImage(
            values=self.values[top : top + height, left : left + width].copy(),
            mask=self.mask[top : top + height, left : left + width].copy(),
        )

    def crop_center(self, height: int, width: int | None = None) -> "CartesianImage":
        """Central crop; offsets round down so parity matches numpy slicing."""
        if width is None:
            width = height
        top = (self.shape[0] - height) // 2
        left = (self.shape[1] - width) // 2
        return self.crop(top, left, height, width)


def largest_even_square(height: int, width: int, cap: int | None = None) -> int:
    """Largest even side length of a square fitting in (height, width).

    Training crops must be even so the half-size pseudo grid divides cleanly.
    """
    side = min(height, width)
    if cap is not None:
        side = min(side, cap)
    return side - (side % 2)


def load_png(path) -> np.ndarray:
    """Load a grayscale PNG as float32 in [0, 1].

    8-bit images are divided by 255, 16-bit by 65535. Colour or palette
    images are rejected rather than silently converted.
    """
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise ImageIOError(f"cannot read image {path}: {exc}") from exc
    if img.mode == "L":
        scale = 255.0
    elif img.mode in ("I;16", "I;16B", "I;16L", "I"):
        scale = 65535.0
    else:
        raise ImageIOError(
            f"{path}: unsupported mode {img.mode!r}; expected 8- or 16-bit grayscale"
        )
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ImageIOError(f"{path}: expected a single-channel image")
    return (arr / scale).astype(np.float32)


def save_png(path, values, bit_depth: int = 16) -> None:
    """Save float values in [0, 1] as a grayscale PNG.

    Quantisation is round-half-away handled by np.rint after clipping, so a
    given float array always produces byte-identical pixel data.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ImageIOError("save_png expects a 2-D array")
    if bit_depth == 8:
        arr = np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
        img = Image.fromarray(arr, mode="L")
    elif bit_depth == 16:
        arr = np.rint(np.clip(values, 0.0, 1.0) * 65535.0).astype(np.uint16)
        img = Image.fromarray(arr)
    else:
        raise ImageIOError(f"unsupported bit depth {bit_depth}; use 8 or 16")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")


def load_image(path, mask_path=None) -> CartesianImage:
    values = load_png(path)
    if mask_path is None:
        mask = np.ones(values.shape, dtype=bool)
    else:
        mask = load_png(mask_path) > 0.5
        if mask.shape != values.shape:
            raise ImageIOError(
                f"mask {mask_path} shape {mask.shape} != image shape {values.shape}"
            )
    return CartesianImage.from_array(values, mask, clip=True)


def save_image(path, image: CartesianImage, bit_depth: int = 16, mask_path=None) -> None:
    save_png(path, image.values, bit_depth=bit_depth)
    if mask_path is not None:
        save_png(mask_path, image.mask.astype(np.float64), bit_depth=8)


def bilinear_sample(values: np.ndarray, x, y) -> np.ndarray:
    """Bilinear interpolation of a 2-D array at continuous (x, y) positions.

    Coordinates follow the pixel-centre convention; samples are edge-clamped
    so positions anywhere inside the image rectangle are valid.
    """
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape
    x = np.asarray(x, dtype=np.float64) - 0.5
    y = np.asarray(y, dtype=np.float64) - 0.5
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, w - 2) if w > 1 else np.zeros_like(x, dtype=np.int64)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, h - 2) if h > 1 else np.zeros_like(y, dtype=np.int64)
    fx = x - x0
    fy = y - y0
    if w == 1:
        fx = np.zeros_like(fx)
    if h == 1:
        fy = np.zeros_like(fy)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    v00 = values[y0, x0]
    v01 = values[y0, x1]
    v10 = values[y1, x0]
    v11 = values[y1, x1]
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy
