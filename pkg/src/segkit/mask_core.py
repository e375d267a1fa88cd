"""Binary mask and bounding-box algebra.

Masks are 2-D ``bool`` numpy arrays indexed ``[row, col]``. The run-length
form follows the COCO convention: counts run over pixels in column-major
order and the first count is always a run of zeros (possibly empty).
Boxes are ``(x, y, w, h)`` in pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._interp import axis_taps, bilinear
from .errors import InvalidRect, InvalidTarget, MalformedRle
from .validation import check_mask, check_same_shape


class BBox(NamedTuple):
    x: float
    y: float
    w: float
    h: float

    @property
    def area(self):
        return self.w * self.h


@dataclass(frozen=True)
class RleMask:
    """Uncompressed COCO run-length encoding of a ``height`` x ``width`` mask."""

    height: int
    width: int
    counts: tuple

    @property
    def area(self):
        return int(sum(self.counts[1::2]))

    def to_dict(self):
        return {"size": [self.height, self.width], "counts": list(self.counts)}


def rle_encode(mask) -> RleMask:
    mask = check_mask(mask)
    h, w = mask.shape
    flat = mask.ravel(order="F")
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = [int(c) for c in np.diff(bounds)]
    if flat[0]:
        counts.insert(0, 0)
    return RleMask(h, w, tuple(counts))


def rle_decode(rle: RleMask) -> np.ndarray:
    """Expand ``rle`` into a bool mask; raise MalformedRle on inconsistent counts."""
    h, w = int(rle.height), int(rle.width)
    if h < 1 or w < 1:
        raise MalformedRle(f"RLE size must be at least 1x1, got {h}x{w}")
    counts = np.asarray(rle.counts, dtype=np.int64)
    if counts.ndim != 1:
        raise MalformedRle("RLE counts must be a flat sequence")
    if counts.size and counts.min() < 0:
        raise MalformedRle("RLE counts must be non-negative")
    total = int(counts.sum())
    if total != h * w:
        raise MalformedRle(f"RLE counts sum to {total}, expected {h}x{w}={h * w}")
    values = (np.arange(counts.size) % 2).astype(bool)
    flat = np.repeat(values, counts)
    return flat.reshape((w, h)).T.copy()


def mask_area(mask):
    return int(np.count_nonzero(mask))


def mask_to_bbox(mask) -> BBox:
    """Tight pixel-extent box of ``mask``; (0, 0, 0, 0) when empty."""
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return BBox(0.0, 0.0, 0.0, 0.0)
    cols = np.flatnonzero(mask.any(axis=0))
    return BBox(
        float(cols[0]),
        float(rows[0]),
        float(cols[-1] - cols[0] + 1),
        float(rows[-1] - rows[0] + 1),
    )


def mask_iou(a, b) -> float:
    """Intersection over union of two same-shape masks; 0.0 if both are empty."""
    a = check_mask(a, "a")
    b = check_mask(b, "b")
    check_same_shape(a, b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return int(np.count_nonzero(a & b)) / int(union)


def mask_iou_matrix(dts, gts):
    """Pairwise IoU between two lists of same-shape masks as an (n, m) array."""
    if not dts or not gts:
        return np.zeros((len(dts), len(gts)))
    d = np.stack([m.ravel() for m in dts]).astype(np.float64)
    g = np.stack([m.ravel() for m in gts]).astype(np.float64)
    inter = d @ g.T
    union = d.sum(1)[:, None] + g.sum(1)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)
    return out


def box_iou(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = aw * ah + bw * bh - inter
    if union <= 0:
        return 0.0
    return inter / union


def box_iou_many(box, boxes):
    """IoU of one box against an (n, 4) array, same arithmetic as box_iou."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    ax, ay, aw, ah = (float(v) for v in box)
    bx, by, bw, bh = boxes.T
    iw = np.minimum(ax + aw, bx + bw) - np.maximum(ax, bx)
    ih = np.minimum(ay + ah, by + bh) - np.maximum(ay, by)
    inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
    union = aw * ah + bw * bh - inter
    safe = np.where(union > 0, union, 1.0)
    return np.where(union > 0, inter / safe, 0.0)


# -- mask geometry ---------------------------------------------------------

def hflip_mask(mask):
    return np.ascontiguousarray(check_mask(mask)[:, ::-1])


def resize_mask(mask, size, window=None):
    """Bilinear resize of the {0,1} field to ``size=(h, w)``, thresholded at 0.5.

    Values of exactly 0.5 become foreground.
    """
    mask = check_mask(mask)
    out_h, out_w = _check_target(size)
    if (out_h, out_w) == mask.shape and window is None:
        return mask.copy()
    y0, x0, wh, ww = window if window is not None else (0, 0, out_h, out_w)
    out = np.zeros((wh, ww), dtype=bool)
    rows, cols = np.flatnonzero(mask.any(axis=1)), np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return out
    # outputs whose taps all miss the mask's support are exactly 0
    i0, i1 = _touching(axis_taps(mask.shape[0], out_h, y0, wh), rows[0], rows[-1])
    j0, j1 = _touching(axis_taps(mask.shape[1], out_w, x0, ww), cols[0], cols[-1])
    if i0 < i1 and j0 < j1:
        sub = (y0 + i0, x0 + j0, i1 - i0, j1 - j0)
        out[i0:i1, j0:j1] = bilinear(mask, out_h, out_w, window=sub) >= 0.5
    return out


def _touching(taps, first, last):
    lo, hi, _ = taps
    hit = np.flatnonzero(((lo >= first) & (lo <= last)) | ((hi >= first) & (hi <= last)))
    return (int(hit[0]), int(hit[-1]) + 1) if hit.size else (0, 0)


def crop_mask(mask, rect):
    mask = check_mask(mask)
    x, y, w, h = _check_rect(rect, mask.shape)
    return mask[y : y + h, x : x + w].copy()


def pad_mask(mask, size):
    mask = check_mask(mask)
    out_h, out_w = _check_pad(size, mask.shape)
    out = np.zeros((out_h, out_w), dtype=bool)
    out[: mask.shape[0], : mask.shape[1]] = mask
    return out


def transform_mask(mask, op, arg=None):
    """Apply one of ``hflip``, ``resize``, ``crop`` or ``pad`` to a mask.

    ``arg`` is the target ``(h, w)`` for resize and pad and the
    ``(x, y, w, h)`` rectangle for crop.
    """
    if op == "hflip":
        return hflip_mask(mask)
    if op == "resize":
        return resize_mask(mask, arg)
    if op == "crop":
        return crop_mask(mask, arg)
    if op == "pad":
        return pad_mask(mask, arg)
    raise ValueError(f"unknown mask op {op!r}")


def transform_box(box, op, arg=None) -> BBox:
    """Apply ``hflip`` (arg: image width), ``scale`` (arg: factor),
    ``clip`` (arg: (h, w)) or ``translate`` (arg: (dx, dy)) to a box."""
    x, y, w, h = (float(v) for v in box)
    if op == "hflip":
        return BBox(float(arg) - x - w, y, w, h)
    if op == "scale":
        s = float(arg)
        return BBox(x * s, y * s, w * s, h * s)
    if op == "clip":
        img_h, img_w = arg
        x0, y0 = min(max(x, 0.0), img_w), min(max(y, 0.0), img_h)
        x1, y1 = min(max(x + w, 0.0), img_w), min(max(y + h, 0.0), img_h)
        return BBox(x0, y0, max(x1 - x0, 0.0), max(y1 - y0, 0.0))
    if op == "translate":
        dx, dy = arg
        return BBox(x + dx, y + dy, w, h)
    raise ValueError(f"unknown box op {op!r}")


def _check_target(size):
    try:
        out_h, out_w = (int(v) for v in size)
    except (TypeError, ValueError):
        raise InvalidTarget(f"resize target must be (h, w), got {size!r}") from None
    if out_h < 1 or out_w < 1:
        raise InvalidTarget(f"resize target must be at least 1x1, got {size!r}")
    return out_h, out_w


def _check_pad(size, shape):
    try:
        out_h, out_w = (int(v) for v in size)
    except (TypeError, ValueError):
        raise InvalidTarget(f"pad target must be (h, w), got {size!r}") from None
    if out_h < shape[0] or out_w < shape[1]:
        raise InvalidTarget(f"pad target {size!r} is smaller than current extent {shape[:2]}")
    return out_h, out_w


def _check_rect(rect, shape):
    try:
        x, y, w, h = (int(v) for v in rect)
    except (TypeError, ValueError):
        raise InvalidRect(f"crop rect must be (x, y, w, h), got {rect!r}") from None
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > shape[1] or y + h > shape[0]:
        raise InvalidRect(f"crop rect {rect!r} outside extent {shape[:2]}")
    return x, y, w, h
