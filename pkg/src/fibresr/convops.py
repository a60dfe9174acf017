"""Low-level batched 2-D convolution with exact gradients.

im2col + GEMM implementation used by both the residual network and the
perceptual feature extractor. Supports 3x3 kernels with reflect padding 1
(any stride) and 1x1 kernels with no padding. Arrays are NCHW; compute dtype
follows the weight dtype, so passing float64 weights runs the whole stack in
float64 (used by the finite-difference tests).

Reflect padding here is numpy's 'reflect' mode (no edge duplication):
``pad[-1] == x[1]``. Its adjoint folds the padded-gradient border back onto
the mirror source rows/columns, which the backward passes below implement
explicitly; finite differences check the fold.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad_reflect(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect")


def _fold_reflect(gpad: np.ndarray, p: int) -> np.ndarray:
    """Adjoint of _pad_reflect: accumulate pad gradients onto their sources."""
    if p == 0:
        return gpad
    if p != 1:
        raise ValueError("only pad 1 supported")
    g = gpad.copy()
    g[:, :, 2, :] += g[:, :, 0, :]
    g[:, :, -3, :] += g[:, :, -1, :]
    g[:, :, :, 2] += g[:, :, :, 0]
    g[:, :, :, -3] += g[:, :, :, -1]
    return g[:, :, 1:-1, 1:-1]


def _im2col(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(B, C, Hp, Wp) -> (B, Ho*Wo, C*k*k) patch matrix (contiguous copy)."""
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (B, C, Ho', Wo', k, k)
    win = win[:, :, ::stride, ::stride]
    b, c, ho, wo, _, _ = win.shape
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho * wo, c * k * k)
    return np.ascontiguousarray(cols), ho, wo


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int = 1):
    """Convolve NCHW input with (O, C, k, k) weights.

    3x3 kernels use reflect padding 1 so spatial size maps H -> ceil(H/stride);
    1x1 kernels use no padding. Returns (output, cache) where cache feeds the
    backward functions.
    """
    o, c, kh, kw = weight.shape
    if kh != kw or kh not in (1, 3):
        raise ValueError(f"unsupported kernel {kh}x{kw}")
    k = kh
    pad = 1 if k == 3 else 0
    dtype = weight.dtype
    x = x.astype(dtype, copy=False)
    xp = _pad_reflect(x, pad)
    cols, ho, wo = _im2col(xp, k, stride)
    w2 = weight.reshape(o, c * k * k)
    b = x.shape[0]
    out = cols.reshape(b * ho * wo, -1) @ w2.T
    out += bias.astype(dtype, copy=False)
    out = out.reshape(b, ho, wo, o).transpose(0, 3, 1, 2)
    cache = (cols, x.shape, k, stride, pad)
    return np.ascontiguousarray(out), cache


def conv2d_backward(gy: np.ndarray, weight: np.ndarray, cache, need_input_grad=True):
    """Gradients of conv2d_forward.

    Returns (gx, gweight, gbias); gx is None when need_input_grad is False.
    Summation order is fixed by the GEMM and the 9-slice scatter, so results
    are bit-reproducible for identical inputs.
    """
    cols, x_shape, k, stride, pad = cache
    o, c, _, _ = weight.shape
    b, _, h, w = x_shape
    gy = np.ascontiguousarray(gy.transpose(0, 2, 3, 1))  # (B, Ho, Wo, O)
    ho, wo = gy.shape[1], gy.shape[2]
    gy2 = gy.reshape(b * ho * wo, o)
    gweight = (gy2.T @ cols.reshape(b * ho * wo, -1)).reshape(weight.shape)
    gbias = gy2.sum(axis=0)
    if not need_input_grad:
        return None, gweight, gbias
    w2 = weight.reshape(o, c * k * k)
    gcols = gy2 @ w2  # (B*Ho*Wo, C*k*k)
    gcols = gcols.reshape(b, ho, wo, c, k, k)
    hp, wp = h + 2 * pad, w + 2 * pad
    gxp = np.zeros((b, c, hp, wp), dtype=weight.dtype)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    gx = _fold_reflect(gxp, pad)
    return gx, gweight, gbias
