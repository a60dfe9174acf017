"""Input validation helpers shared by the estimator adapters.

These normalise the permissive inputs the estimator API accepts (arrays,
CartesianImage instances, sequences of either) into the typed objects the
functional core works with, raising ConfigurationError with actionable
messages instead of letting shape errors surface deep in the pipeline.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .geometry import FibrePattern
from .images import CartesianImage


def check_image(x, name: str = "image") -> CartesianImage:
    """Coerce one image-like input to a CartesianImage."""
    if isinstance(x, CartesianImage):
        return x
    arr = np.asarray(x)
    if arr.ndim != 2:
        raise ConfigurationError(f"{name} must be 2-D, got shape {arr.shape}")
    return CartesianImage.from_array(arr)


def check_frames(X, name: str = "frames") -> list[CartesianImage]:
    """Coerce a frame sequence (list/array of 2-D images) to CartesianImages.

    A single 2-D array is treated as a one-frame video; a 3-D array as a
    stack of frames.
    """
    if isinstance(X, CartesianImage):
        return [X]
    if isinstance(X, np.ndarray):
        if X.ndim == 2:
            return [check_image(X, name)]
        if X.ndim == 3:
            return [check_image(f, f"{name}[{i}]") for i, f in enumerate(X)]
        raise ConfigurationError(f"{name} array must be 2-D or 3-D, got {X.shape}")
    try:
        frames = list(X)
    except TypeError as exc:
        raise ConfigurationError(f"{name} must be a sequence of images") from exc
    if not frames:
        raise ConfigurationError(f"{name} is empty")
    out = [check_image(f, f"{name}[{i}]") for i, f in enumerate(frames)]
    shape = out[0].shape
    for i, f in enumerate(out):
        if f.shape != shape:
            raise ConfigurationError(
                f"{name}[{i}] has shape {f.shape}, expected {shape}"
            )
    return out


def check_pattern(pattern, name: str = "pattern") -> FibrePattern:
    """Require a FibrePattern (or a path to a saved one)."""
    if isinstance(pattern, FibrePattern):
        return pattern
    if isinstance(pattern, (str, bytes)) or hasattr(pattern, "__fspath__"):
        return FibrePattern.load(pattern)
    raise ConfigurationError(
        f"{name} must be a FibrePattern or a pattern file path, got {type(pattern)!r}"
    )


def check_pairs(X, y=None, name: str = "pairs"):
    """Normalise supervised training input to [(lr, hr), ...].

    Accepts either a sequence of (lr, hr) tuples as X, or parallel
    sequences X (low-res) and y (high-res).
    """
    if y is not None:
        lows = check_frames(X, "X")
        highs = check_frames(y, "y")
        if len(lows) != len(highs):
            raise ConfigurationError(
                f"X has {len(lows)} images but y has {len(highs)}"
            )
        return list(zip(lows, highs))
    try:
        items = list(X)
    except TypeError as exc:
        raise ConfigurationError(f"{name} must be a sequence") from exc
    out = []
    for i, item in enumerate(items):
        if not isinstance(item, (tuple, list)) or len(item) != 2:
            raise ConfigurationError(f"{name}[{i}] is not an (lr, hr) pair")
        out.append((check_image(item[0], f"{name}[{i}].lr"),
                    check_image(item[1], f"{name}[{i}].hr")))
    if not out:
        raise ConfigurationError(f"{name} is empty")
    return out


def check_fitted(estimator, attribute: str) -> None:
    """Raise if the estimator has not been fitted yet."""
    if getattr(estimator, attribute, None) is None:
        raise ConfigurationError(
            f"{type(estimator).__name__} is not fitted; call fit() first"
        )
