"""Detection post-processing, from score calibration to fusing test-time views.

The default order is ``calibrate_scores`` then ``soft_nms`` (or
``tta_merge``, which ends in soft-NMS).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from itertools import groupby

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import ConfigError, ShapeError
from .mask_core import BBox, box_iou_many, mask_iou_matrix, resize_mask, rle_decode, rle_encode
from .validation import check_positive, check_unit_interval

MERGE_CONCAT_SOFTNMS = "concat_softnms"

DEFAULT_TTA_SCALES = (1.0, 1.5, 2.0, 2.5, 3.0)


@dataclass(frozen=True)
class SoftNmsParams:
    method: str = "gaussian"
    sigma: float = 0.5
    iou_threshold: float = 0.3
    score_floor: float = 0.001
    max_keep: int = 100
    iou_kind: str = "box"

    def __post_init__(self):
        if self.method not in ("gaussian", "linear"):
            raise ConfigError(f"method must be 'gaussian' or 'linear', got {self.method!r}", "$.method")
        check_positive(self.sigma, "sigma", "$.sigma")
        check_unit_interval(self.iou_threshold, "iou_threshold", "$.iou_threshold")
        check_unit_interval(self.score_floor, "score_floor", "$.score_floor")
        if isinstance(self.max_keep, bool) or not isinstance(self.max_keep, int) or self.max_keep < 0:
            raise ConfigError(f"max_keep must be a non-negative integer, got {self.max_keep!r}", "$.max_keep")
        if self.iou_kind not in ("box", "mask"):
            raise ConfigError(f"iou_kind must be 'box' or 'mask', got {self.iou_kind!r}", "$.iou_kind")

    @classmethod
    def from_dict(cls, doc, path="$.postprocess"):
        if not isinstance(doc, dict):
            raise ConfigError("expected an object", path)
        known = set(cls.__dataclass_fields__)
        for key in doc:
            if key not in known:
                raise ConfigError(f"unknown key {key!r}", f"{path}.{key}")
        try:
            return cls(**doc)
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[1], path + exc.path[1:]) from None


@dataclass(frozen=True)
class TtaTransform:
    """A test-time view: the original image scaled by ``scale``, then optionally hflipped."""

    scale: float
    hflipped: bool
    original_extent: tuple  # (h, w)

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigError(f"scale must be > 0, got {self.scale!r}", "$.scale")
        object.__setattr__(self, "original_extent", tuple(int(v) for v in self.original_extent))

    @property
    def view_extent(self):
        h, w = self.original_extent
        return (max(1, math.floor(h * self.scale + 0.5)), max(1, math.floor(w * self.scale + 0.5)))

    @property
    def name(self):
        return f"s{self.scale:g}_{'flip' if self.hflipped else 'noflip'}"


def default_tta_views(original_extent, scales=DEFAULT_TTA_SCALES):
    """The 10-view set: every scale without and with horizontal flip."""
    return [TtaTransform(s, f, original_extent) for s in scales for f in (False, True)]


def calibrate_scores(dets):
    """Multiply each score by its predicted mask IoU when one is present."""
    return [
        d if d.mask_iou_pred is None else replace(d, score=d.score * d.mask_iou_pred)
        for d in dets
    ]


def soft_nms(dets, params: SoftNmsParams = SoftNmsParams()):
    """Soft-NMS over one image's detections.

    Repeatedly emits the highest-scoring remaining detection (ties go to the
    lower input index) and decays the scores of remaining detections of the
    same category by ``exp(-iou**2 / sigma)`` (gaussian) or by ``1 - iou``
    when ``iou > iou_threshold`` (linear). Detections whose score drops below
    ``score_floor`` are discarded. Returns at most ``max_keep`` detections in
    emission order, carrying their rescored values.
    """
    dets = list(dets)
    n = len(dets)
    if n == 0 or params.max_keep == 0:
        return []
    scores = np.array([d.score for d in dets], dtype=np.float64)
    boxes = np.array([tuple(d.bbox) for d in dets], dtype=np.float64).reshape(n, 4)
    cats = np.array([d.category_id for d in dets])
    masks = [rle_decode(d.mask) for d in dets] if params.iou_kind == "mask" else None

    alive = scores >= params.score_floor
    out = []
    while len(out) < params.max_keep:
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        # argmax returns the first maximum, i.e. the lowest input index
        i = int(idx[np.argmax(scores[idx])])
        alive[i] = False
        out.append(dets[i] if scores[i] == dets[i].score else replace(dets[i], score=float(scores[i])))

        rest = np.flatnonzero(alive & (cats == cats[i]))
        if rest.size == 0:
            continue
        if masks is None:
            ious = box_iou_many(boxes[i], boxes[rest])
        else:
            ious = mask_iou_matrix([masks[i]], [masks[j] for j in rest])[0]
        if params.method == "gaussian":
            hit = ious > 0
            decay = np.exp(-(ious[hit] ** 2) / params.sigma)
        else:
            hit = ious > params.iou_threshold
            decay = 1.0 - ious[hit]
        scores[rest[hit]] *= decay
        alive[rest[hit]] &= scores[rest[hit]] >= params.score_floor
    return out


def _map_box(box, t: TtaTransform, inverse):
    x, y, w, h = box
    view_w = t.view_extent[1]
    if inverse:
        # unflip in the view frame: its width is rounded, not exactly w * scale
        if t.hflipped:
            x = view_w - x - w
        x, y, w, h = x / t.scale, y / t.scale, w / t.scale, h / t.scale
    else:
        x, y, w, h = x * t.scale, y * t.scale, w * t.scale, h * t.scale
        if t.hflipped:
            x = view_w - x - w
    return BBox(float(x), float(y), float(w), float(h))


def forward_map(dets, t: TtaTransform):
    """Express original-frame detections in the frame of view ``t``."""
    out = []
    for d in dets:
        mask = rle_decode(d.mask)
        if mask.shape != t.original_extent:
            raise ShapeError(f"mask extent {mask.shape} does not match original {t.original_extent}")
        mask = resize_mask(mask, t.view_extent)
        if t.hflipped:
            mask = mask[:, ::-1]
        out.append(replace(d, bbox=_map_box(d.bbox, t, False), mask=rle_encode(mask)))
    return out


def inverse_map(dets, t: TtaTransform):
    """Map view-frame detections back to the original image frame.

    Boxes are un-flipped within the view then divided by the scale; masks
    are resized to the original extent (bilinear, 0.5 threshold) then
    un-flipped, which is the same thing since the resize is mirror-symmetric.
    """
    for d in dets:
        if (d.mask.height, d.mask.width) != t.view_extent:
            raise ShapeError(
                f"mask extent {(d.mask.height, d.mask.width)} inconsistent with view {t.view_extent}"
            )
    if t.scale == 1.0 and not t.hflipped:
        return list(dets)
    out = []
    for d in dets:
        mask = resize_mask(rle_decode(d.mask), t.original_extent)
        if t.hflipped:
            mask = mask[:, ::-1]
        out.append(replace(d, bbox=_map_box(d.bbox, t, True), mask=rle_encode(mask)))
    return out


def tta_merge(groups, params: SoftNmsParams = SoftNmsParams()):
    """Fuse per-view detections: inverse-map every group, concatenate, soft-NMS.

    Masks are never averaged; each survivor keeps its own mask.
    """
    merged = []
    for dets, t in groups:
        merged.extend(inverse_map(dets, t))
    return soft_nms(merged, params)


class ScoreCalibrator(TransformerMixin, BaseEstimator):
    """Stateless transformer form of :func:`calibrate_scores`."""

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return calibrate_scores(X)

    def __sklearn_is_fitted__(self):
        return True


class SoftNMS(TransformerMixin, BaseEstimator):
    """Soft-NMS applied independently to each image's detections.

    Output is grouped by image in first-appearance order.
    """

    def __init__(self, method="gaussian", sigma=0.5, iou_threshold=0.3, score_floor=0.001, max_keep=100, iou_kind="box"):
        self.method = method
        self.sigma = sigma
        self.iou_threshold = iou_threshold
        self.score_floor = score_floor
        self.max_keep = max_keep
        self.iou_kind = iou_kind

    def fit(self, X=None, y=None):
        self._params()
        return self

    def __sklearn_is_fitted__(self):
        return True

    def _params(self):
        return SoftNmsParams(**self.get_params())

    def transform(self, X):
        params = self._params()
        order = {}
        for d in X:
            order.setdefault(d.image_id, len(order))
        by_image = sorted(X, key=lambda d: order[d.image_id])
        out = []
        for _, group in groupby(by_image, key=lambda d: d.image_id):
            out.extend(soft_nms(list(group), params))
        return out
