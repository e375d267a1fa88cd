"""Separable bilinear resampling with half-pixel-center sampling.

Shared by mask and image resizing so both sides of a transform sample the
same source coordinates.
"""

from __future__ import annotations

import numpy as np


def axis_taps(n_in, n_out, start, count):
    # output index i samples source coordinate (i + 0.5) * n_in / n_out - 0.5
    idx = np.arange(start, start + count, dtype=np.float64)
    src = (idx + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear(arr, out_h, out_w, window=None, dtype=np.float64):
    """Resample ``arr`` (H, W[, C]) to ``out_h`` x ``out_w``.

    ``window=(y0, x0, h, w)`` evaluates only that sub-rectangle of the full
    output grid, which equals resizing and then cropping but never
    materialises the full-size result.
    """
    if arr.ndim == 3:
        # per-channel planes: gathering along axis 1 of an (H, W, C) array is slow
        planes = [bilinear(arr[..., c], out_h, out_w, window, dtype) for c in range(arr.shape[2])]
        return np.stack(planes, axis=-1)
    in_h, in_w = arr.shape
    if window is None:
        window = (0, 0, out_h, out_w)
    y0, x0, wh, ww = window
    ylo, yhi, fy = axis_taps(in_h, out_h, y0, wh)
    xlo, xhi, fx = axis_taps(in_w, out_w, x0, ww)

    src = arr.astype(dtype, copy=False)
    fy = fy.astype(dtype)[:, None]
    fx = fx.astype(dtype)[None, :]

    # in-place form of lo * (1 - f) + hi * f, same rounding
    rows = src[ylo]
    rows *= 1 - fy
    tmp = src[yhi]
    tmp *= fy
    rows += tmp
    out = rows[:, xlo]
    out *= 1 - fx
    tmp = rows[:, xhi]
    tmp *= fx
    out += tmp
    return out
