"""Pixel-level primitives on (H, W, 3) uint8 RGB images."""

from __future__ import annotations

import numpy as np
from PIL import Image

from ._interp import bilinear
from .errors import IoError
from .mask_core import _check_pad, _check_rect, _check_target
from .validation import check_image

DEFAULT_PAD_FILL = (114, 114, 114)


def round_half_up(values):
    """Round to the nearest integer with .5 going up, then clamp to uint8."""
    out = np.add(values, 0.5)
    np.floor(out, out=out)
    np.clip(out, 0, 255, out=out)
    return out.astype(np.uint8)


def rgb_to_hsv(rgb):
    """Hexcone RGB -> HSV on the last axis.

    Returns hue in degrees [0, 360), saturation in [0, 1] and value in the
    same 0..255 units as the input.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    s = np.divide(c, v, out=np.zeros_like(v), where=v > 0)
    safe_c = np.where(c > 0, c, 1.0)
    h = np.where(
        v == r,
        np.mod((g - b) / safe_c, 6.0),
        np.where(v == g, (b - r) / safe_c + 2.0, (r - g) / safe_c + 4.0),
    )
    h = np.where(c > 0, h * 60.0, 0.0)
    h = np.mod(h, 360.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv):
    """Inverse of :func:`rgb_to_hsv`; returns unrounded float channels."""
    hsv = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    c = v * s
    hp = np.mod(h, 360.0) / 60.0
    x = c * (1.0 - np.abs(np.mod(hp, 2.0) - 1.0))
    z = np.zeros_like(c)
    sector = np.floor(hp).astype(np.int64) % 6
    r = np.choose(sector, [c, x, z, z, x, c])
    g = np.choose(sector, [x, c, c, x, z, z])
    b = np.choose(sector, [z, z, x, c, c, x])
    m = v - c
    return np.stack([r + m, g + m, b + m], axis=-1)


def photometric_adjust(img, op, value):
    """Apply one photometric op.

    ``brightness`` adds ``value`` to every channel, ``contrast`` multiplies by
    it, ``saturation`` scales S in HSV and ``hue`` rotates H by ``value``
    degrees. Results are rounded half-up and clamped to 0..255.
    """
    img = check_image(img)
    if op == "brightness":
        return round_half_up(img.astype(np.float64) + float(value))
    if op == "contrast":
        return round_half_up(img.astype(np.float64) * float(value))
    if op == "saturation":
        hsv = rgb_to_hsv(img)
        hsv[..., 1] = np.clip(hsv[..., 1] * float(value), 0.0, 1.0)
        return round_half_up(hsv_to_rgb(hsv))
    if op == "hue":
        hsv = rgb_to_hsv(img)
        hsv[..., 0] = np.mod(hsv[..., 0] + float(value), 360.0)
        return round_half_up(hsv_to_rgb(hsv))
    raise ValueError(f"unknown photometric op {op!r}")


def hflip_image(img):
    return np.ascontiguousarray(check_image(img)[:, ::-1])


def resize_image(img, size, window=None):
    img = check_image(img)
    out_h, out_w = _check_target(size)
    if (out_h, out_w) == img.shape[:2] and window is None:
        return img.copy()
    y0, x0, h, w = window if window is not None else (0, 0, out_h, out_w)
    out = np.empty((h, w, 3), dtype=np.uint8)
    for c in range(3):
        out[..., c] = round_half_up(bilinear(img[..., c], out_h, out_w, window=window, dtype=np.float32))
    return out


def crop_image(img, rect):
    img = check_image(img)
    x, y, w, h = _check_rect(rect, img.shape)
    return img[y : y + h, x : x + w].copy()


def pad_image(img, size, fill=DEFAULT_PAD_FILL):
    img = check_image(img)
    out_h, out_w = _check_pad(size, img.shape)
    h, w = img.shape[:2]
    fill = np.asarray(fill, dtype=np.uint8)
    out = np.empty((out_h, out_w, 3), dtype=np.uint8)
    out[:h, :w] = img
    out[:h, w:] = fill
    out[h:] = fill
    return out


def resample_image(img, op, arg=None, fill=DEFAULT_PAD_FILL):
    """Image counterpart of :func:`segkit.mask_core.transform_mask`."""
    if op == "hflip":
        return hflip_image(img)
    if op == "resize":
        return resize_image(img, arg)
    if op == "crop":
        return crop_image(img, arg)
    if op == "pad":
        return pad_image(img, arg, fill)
    raise ValueError(f"unknown image op {op!r}")


def read_png(path):
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except OSError as exc:
        raise IoError(f"cannot read image {path}: {exc}") from exc


def write_png(img, path):
    img = check_image(img)
    try:
        Image.fromarray(img, mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise IoError(f"cannot write image {path}: {exc}") from exc
