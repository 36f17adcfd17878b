"""Gather-based 2D image ops on (C, H, W) tensors.

Convolution is im2col + matmul so that everything stays on the tape,
including the second backward pass needed by the R1 penalty.  Index arrays
are pure integers and participate in no gradients.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import autodiff as ad


def _reflect(v, n):
    # numpy 'reflect' convention (no edge duplication); valid for |overhang| < n
    v = np.where(v < 0, -v, v)
    return np.where(v >= n, 2 * n - 2 - v, v)


@lru_cache(maxsize=None)
def _im2col_indices(h, w, k, stride):
    """Flat gather indices, shape (k*k*H_out*W_out,), reflect padding."""
    pad = k // 2
    ys = np.arange(0, h, stride)
    xs = np.arange(0, w, stride)
    oy, ox = np.meshgrid(ys, xs, indexing="ij")
    rows = []
    for dy in range(-pad, pad + 1):
        for dx in range(-pad, pad + 1):
            sy = _reflect(oy + dy, h)
            sx = _reflect(ox + dx, w)
            rows.append((sy * w + sx).ravel())
    return np.concatenate(rows), len(ys), len(xs)


def im2col(x, k, stride=1):
    """(C, H, W) -> (C*k*k, H_out*W_out) column matrix (reflect padded)."""
    c, h, w = x.shape
    idx, ho, wo = _im2col_indices(h, w, k, stride)
    cols = ad.gather_cols(ad.reshape(x, (c, h * w)), idx)      # (C, k*k*P)
    cols = ad.reshape(cols, (c, k * k, ho * wo))
    return ad.reshape(cols, (c * k * k, ho * wo)), ho, wo


def conv2d(x, kernel, stride=1):
    """2D convolution with reflect padding.

    x: (C_in, H, W); kernel: (C_out, C_in, k, k) -> (C_out, H_out, W_out).
    """
    c_out, c_in, k, _ = kernel.shape
    if x.shape[0] != c_in:
        raise ValueError(f"conv2d: input has {x.shape[0]} channels, kernel wants {c_in}")
    cols, ho, wo = im2col(x, k, stride)
    out = ad.matmul(ad.reshape(kernel, (c_out, c_in * k * k)), cols)
    return ad.reshape(out, (c_out, ho, wo))


@lru_cache(maxsize=None)
def _upsample_indices(h, w, factor):
    oy, ox = np.meshgrid(np.arange(h * factor), np.arange(w * factor), indexing="ij")
    return ((oy // factor) * w + (ox // factor)).ravel()


def upsample_nearest(x, factor=2):
    """(C, H, W) -> (C, factor*H, factor*W), nearest-neighbor."""
    c, h, w = x.shape
    idx = _upsample_indices(h, w, factor)
    out = ad.gather_cols(ad.reshape(x, (c, h * w)), idx)
    return ad.reshape(out, (c, h * factor, w * factor))


@lru_cache(maxsize=None)
def _blur_downsample_matrix(n, dtype_name):
    """(n//2, n) matrix applying a 5-tap [1,4,6,4,1]/16 blur then 2x decimation,
    reflect boundary."""
    taps = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    m = np.zeros((n // 2, n), dtype=dtype_name)
    for r in range(n // 2):
        center = 2 * r
        for t, tap in zip(range(-2, 3), taps):
            m[r, int(_reflect(np.array(center + t), n))] += tap
    return m


def blur_downsample2(img):
    """(H, W, C) image tensor -> (H//2, W//2, C), separable Gaussian + stride 2."""
    h, w, c = img.shape
    bh = ad.Tensor(_blur_downsample_matrix(h, str(img.dtype)))
    bw = ad.Tensor(_blur_downsample_matrix(w, str(img.dtype)))
    x = ad.reshape(ad.permute(img, (2, 0, 1)), (c * h, w))            # rows of width w
    x = ad.reshape(ad.matmul(x, bw.T), (c, h, w // 2))
    x = ad.reshape(ad.permute(x, (0, 2, 1)), (c * (w // 2), h))
    x = ad.reshape(ad.matmul(x, bh.T), (c, w // 2, h // 2))
    return ad.permute(x, (2, 1, 0))
