"""COCO-style mask mAP (AP@0.50:0.95).

Matching is greedy per (image, category): detections in descending score
order each take the unmatched non-crowd ground truth with the highest IoU at
or above the threshold. Unmatched detections that overlap a crowd region by
at least the threshold (intersection over detection area, as in the COCO
API) are ignored rather than counted as false positives. AP is the mean
101-point interpolated precision; area-range breakdowns are not computed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from sklearn.base import BaseEstimator

from .dataset_io import Dataset
from .errors import ConfigError, ShapeMismatch, UnknownId
from .mask_core import box_iou, rle_decode

DEFAULT_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = tuple(i / 100 for i in range(101))


@dataclass(frozen=True)
class EvalParams:
    iou_thresholds: tuple = DEFAULT_IOU_THRESHOLDS
    recall_points: tuple = RECALL_POINTS
    max_dets: int = 100
    iou_kind: str = "mask"

    def __post_init__(self):
        thr = tuple(float(t) for t in self.iou_thresholds)
        object.__setattr__(self, "iou_thresholds", thr)
        object.__setattr__(self, "recall_points", tuple(float(r) for r in self.recall_points))
        if not thr or any(not 0.0 <= t <= 1.0 for t in thr):
            raise ConfigError("iou_thresholds must be a non-empty list of values in [0, 1]", "$.iou_thresholds")
        if any(b <= a for a, b in zip(thr, thr[1:])):
            raise ConfigError("iou_thresholds must be strictly increasing", "$.iou_thresholds")
        if isinstance(self.max_dets, bool) or not isinstance(self.max_dets, int) or self.max_dets < 1:
            raise ConfigError(f"max_dets must be a positive integer, got {self.max_dets!r}", "$.max_dets")
        if self.iou_kind not in ("mask", "box"):
            raise ConfigError(f"iou_kind must be 'mask' or 'box', got {self.iou_kind!r}", "$.iou_kind")

    @classmethod
    def from_dict(cls, doc, path="$.eval"):
        if not isinstance(doc, dict):
            raise ConfigError("expected an object", path)
        for key in doc:
            if key not in cls.__dataclass_fields__:
                raise ConfigError(f"unknown key {key!r}", f"{path}.{key}")
        try:
            return cls(**doc)
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[1], path + exc.path[1:]) from None


@dataclass
class EvalReport:
    ap_per_threshold: dict
    map: float
    per_category: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "map": self.map,
            "ap_per_threshold": {f"{t:.2f}": ap for t, ap in self.ap_per_threshold.items()},
            "per_category": {
                str(cat): {f"{t:.2f}": ap for t, ap in aps.items()}
                for cat, aps in self.per_category.items()
            },
        }

    def to_json(self):
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, doc):
        return cls(
            ap_per_threshold={float(t): float(v) for t, v in doc["ap_per_threshold"].items()},
            map=float(doc["map"]),
            per_category={
                int(c): {float(t): float(v) for t, v in aps.items()}
                for c, aps in doc.get("per_category", {}).items()
            },
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


class Match(NamedTuple):
    det_index: int
    gt_index: Optional[int]
    ignored: bool = False


def _ranked(dets, max_dets):
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    return order[:max_dets]


def iou_table(dets, gts, kind="mask"):
    """(n_dets, n_gts) IoU plus, for crowd columns, intersection over det area."""
    n, m = len(dets), len(gts)
    ious = np.zeros((n, m))
    if n == 0 or m == 0:
        return ious
    if kind == "box":
        for i, d in enumerate(dets):
            for j, g in enumerate(gts):
                if g.iscrowd:
                    ix = max(0.0, min(d.bbox[0] + d.bbox[2], g.bbox[0] + g.bbox[2]) - max(d.bbox[0], g.bbox[0]))
                    iy = max(0.0, min(d.bbox[1] + d.bbox[3], g.bbox[1] + g.bbox[3]) - max(d.bbox[1], g.bbox[1]))
                    area = d.bbox[2] * d.bbox[3]
                    ious[i, j] = ix * iy / area if area > 0 else 0.0
                else:
                    ious[i, j] = box_iou(d.bbox, g.bbox)
        return ious
    dm = np.stack([rle_decode(d.mask).ravel() for d in dets]).astype(np.float64)
    gm = np.stack([rle_decode(g.mask).ravel() for g in gts]).astype(np.float64)
    if dm.shape[1] != gm.shape[1]:
        raise ShapeMismatch("detection and ground-truth masks differ in image extent")
    inter = dm @ gm.T
    d_area = dm.sum(1)[:, None]
    union = d_area + gm.sum(1)[None, :] - inter
    crowd = np.array([bool(g.iscrowd) for g in gts])[None, :]
    denom = np.where(crowd, d_area, union)
    return np.where(denom > 0, inter / np.where(denom > 0, denom, 1.0), 0.0)


def match_image(dets, gts, thr, p: EvalParams = EvalParams(), ious=None):
    """Greedy matching of one image's detections of one category.

    Returns one :class:`Match` per retained detection in processing order
    (descending score, ties by input index, truncated to ``max_dets``).
    """
    if ious is None:
        ious = iou_table(dets, gts, p.iou_kind)
    taken = [False] * len(gts)
    out = []
    for i in _ranked(dets, p.max_dets):
        best, best_iou = None, thr
        for j, g in enumerate(gts):
            if g.iscrowd or taken[j] or g.category_id != dets[i].category_id:
                continue
            # strict '>' keeps the lowest gt index on IoU ties
            if ious[i, j] >= best_iou and (best is None or ious[i, j] > ious[i, best]):
                best, best_iou = j, ious[i, j]
        if best is not None:
            taken[best] = True
            out.append(Match(i, best))
            continue
        ignored = any(
            g.iscrowd and g.category_id == dets[i].category_id and ious[i, j] >= thr
            for j, g in enumerate(gts)
        )
        out.append(Match(i, None, ignored))
    return out


def average_precision(tp_fp_sequence, total_gt, p: EvalParams = EvalParams()):
    """101-point interpolated AP of a score-sorted TP/FP sequence.

    Returns None when there is nothing to score (no ground truth and no
    detections), 0.0 when detections exist without ground truth.
    """
    tps = np.asarray(list(tp_fp_sequence), dtype=bool)
    if total_gt == 0:
        return None if tps.size == 0 else 0.0
    if tps.size == 0:
        return 0.0
    tp_cum = np.cumsum(tps)
    recall = tp_cum / total_gt
    precision = tp_cum / np.arange(1, tps.size + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, np.asarray(p.recall_points), side="left")
    sampled = np.where(idx < tps.size, envelope[np.minimum(idx, tps.size - 1)], 0.0)
    return math.fsum(sampled.tolist()) / len(sampled)


def evaluate(dets, gt: Dataset, p: EvalParams = EvalParams()) -> EvalReport:
    """Mask (or box) AP per IoU threshold and its mean over thresholds."""
    image_order = {im.id: k for k, im in enumerate(gt.images)}
    cat_ids = sorted(c.id for c in gt.categories)
    known_cats = set(cat_ids)
    for d in dets:
        if d.image_id not in image_order:
            raise UnknownId(f"detection references unknown image_id {d.image_id}")
        if d.category_id not in known_cats:
            raise UnknownId(f"detection references unknown category_id {d.category_id}")

    gts_by = {}
    for g in gt.annotations:
        gts_by.setdefault((g.image_id, g.category_id), []).append(g)
    dets_by = {}
    for d in dets:
        dets_by.setdefault((d.image_id, d.category_id), []).append(d)

    per_category = {}
    for cat in cat_ids:
        total = sum(
            1 for (img, c), gs in gts_by.items() if c == cat for g in gs if not g.iscrowd
        )
        if total == 0:
            continue
        keys = sorted(
            {k for k in list(gts_by) + list(dets_by) if k[1] == cat},
            key=lambda k: image_order[k[0]],
        )
        cells = []
        for key in keys:
            ds, gs = dets_by.get(key, []), gts_by.get(key, [])
            cells.append((ds, gs, iou_table(ds, gs, p.iou_kind) if ds else None))
        aps = {}
        for thr in p.iou_thresholds:
            pooled = []
            for ds, gs, ious in cells:
                if not ds:
                    continue
                for m in match_image(ds, gs, thr, p, ious):
                    if not m.ignored:
                        pooled.append((ds[m.det_index].score, m.gt_index is not None))
            # stable sort keeps image order, then within-image rank, on score ties
            pooled.sort(key=lambda t: -t[0])
            aps[thr] = average_precision([tp for _, tp in pooled], total, p)
        per_category[cat] = aps

    ap_per_threshold = {}
    for thr in p.iou_thresholds:
        vals = [per_category[c][thr] for c in per_category]
        ap_per_threshold[thr] = math.fsum(vals) / len(vals) if vals else 0.0
    # fsum makes every average independent of summation order
    mean_ap = math.fsum(ap_per_threshold.values()) / len(ap_per_threshold)
    return EvalReport(ap_per_threshold, mean_ap, per_category)


class MaskAPEvaluator(BaseEstimator):
    """Estimator front-end: ``fit`` stores the ground truth, ``score`` returns mAP."""

    def __init__(self, iou_thresholds=DEFAULT_IOU_THRESHOLDS, max_dets=100, iou_kind="mask"):
        self.iou_thresholds = iou_thresholds
        self.max_dets = max_dets
        self.iou_kind = iou_kind

    def _params(self):
        return EvalParams(tuple(self.iou_thresholds), RECALL_POINTS, self.max_dets, self.iou_kind)

    def fit(self, gt: Dataset, y=None):
        self._params()
        self.gt_ = gt
        return self

    def evaluate(self, dets) -> EvalReport:
        if not hasattr(self, "gt_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("MaskAPEvaluator needs fit(ground_truth) first")
        self.report_ = evaluate(dets, self.gt_, self._params())
        return self.report_

    def score(self, dets, y=None):
        return self.evaluate(dets).map
