"""Shared fixtures: deterministic patterns, textures, and tiny datasets."""

from __future__ import annotations

import numpy as np
import pytest

from fibresr.geometry import FibrePattern, generate_quasi_hex_pattern
from fibresr.images import CartesianImage


def make_texture(size: int, seed: int, *, sharp: bool = False) -> np.ndarray:
    """Smooth synthetic texture in [0.05, 0.95] with multi-scale structure.

    With sharp=True, adds thresholded blobs so the image has real edges.
    """
    from scipy import ndimage

    rng = np.random.default_rng(seed)
    base = rng.standard_normal((size, size))
    img = (
        ndimage.gaussian_filter(base, 1.0) * 0.6
        + ndimage.gaussian_filter(base, 3.0) * 1.2
        + ndimage.gaussian_filter(base, 10.0) * 1.5
    )
    if sharp:
        blobs = ndimage.gaussian_filter(rng.standard_normal((size, size)), 4.0)
        edges = np.where(blobs > 0.0, 1.0, -1.0)
        img = img + ndimage.gaussian_filter(edges, 0.8) * 1.2
    lo, hi = img.min(), img.max()
    return (0.05 + 0.9 * (img - lo) / (hi - lo)).astype(np.float64)


def make_scene(size: int, seed: int) -> np.ndarray:
    """Heterogeneous texture: patches of smooth blobs, sharp edges, grain.

    Three texture regimes blended by slowly varying softmax weights, so
    different parts of the scene have genuinely different statistics —
    closer to tissue than a single stationary texture.
    """
    from scipy import ndimage

    rng = np.random.default_rng(seed)
    g = ndimage.gaussian_filter
    smooth = g(rng.standard_normal((size, size)), 6.0) * 3.0
    edges = np.where(g(rng.standard_normal((size, size)), 5.0) > 0, 1.0, -1.0)
    edges = g(edges, 0.7)
    grain = g(rng.standard_normal((size, size)), 1.2) * 1.5
    logits = np.stack(
        [g(rng.standard_normal((size, size)), 24.0) * 8.0 for _ in range(3)]
    )
    w = np.exp(logits - logits.max(axis=0))
    w /= w.sum(axis=0)
    img = w[0] * smooth + w[1] * edges + w[2] * grain
    lo, hi = np.percentile(img, [1, 99])
    img = (img - lo) / max(hi - lo, 1e-9)
    return np.clip(0.05 + 0.9 * img, 0.0, 1.0)


@pytest.fixture(scope="session")
def pattern_64() -> FibrePattern:
    """~450-fibre quasi-hex pattern on a 64x64 grid (auto spacing)."""
    return generate_quasi_hex_pattern(64, 64, seed=3)


@pytest.fixture(scope="session")
def pattern_32() -> FibrePattern:
    """Small pattern on a 32x32 grid, handy for fast Voronoi checks."""
    return generate_quasi_hex_pattern(32, 32, seed=5)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(2024)


@pytest.fixture(scope="session")
def texture_64() -> np.ndarray:
    return make_texture(64, seed=7)


@pytest.fixture(scope="session")
def image_64(texture_64) -> CartesianImage:
    return CartesianImage.from_array(texture_64)
