"""Detector interface, a synthetic oracle detector and the end-to-end runner.

The runner wires, per image: build the TTA views, obtain detections for each
view (from the oracle or from pre-computed per-view results files),
calibrate scores, fuse with :func:`~segkit.postprocess.tta_merge`, and
finally evaluate against the ground truth.

Pipeline config (JSON)::

    {
      "dataset": "path/to/coco.json",
      "detector": {"oracle": {...OracleParams fields...}}
                  | {"results_files": {"s1_noflip": "r.json", "s1.5_flip": ...}},
      "tta": [{"scale": 1.0, "hflip": false}, ...],
      "postprocess": {...SoftNmsParams fields...},
      "eval": {...EvalParams fields...},
      "seed": 0
    }

Relative paths resolve against the config file's directory. Per-view results
files hold detections in that view's frame; view names are
``TtaTransform.name`` (e.g. ``s1.5_flip``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Protocol

import numpy as np
from scipy import ndimage

from .dataset_io import (
    Annotation,
    Category,
    Dataset,
    Detection,
    ImageInfo,
    load_coco,
    load_results,
    write_results,
)
from .errors import ConfigError, IoError, ParseError, UnknownId
from .evaluator import EvalParams, EvalReport, evaluate
from .imaging import hflip_image, resize_image
from .mask_core import BBox, mask_area, mask_iou, mask_to_bbox, rle_decode, rle_encode
from .postprocess import (
    SoftNmsParams,
    TtaTransform,
    calibrate_scores,
    default_tta_views,
    forward_map,
    tta_merge,
)
from .rng import random_stream
from .validation import check_non_negative, check_unit_interval


class Detector(Protocol):
    """Anything that turns an RGB image into detections in that image's frame."""

    def infer(self, image: np.ndarray) -> list:
        ...


def detect_views(detector: Detector, image, image_id, views):
    """Run an in-process detector on each TTA view of ``image``.

    Returns ``[(detections, view), ...]`` ready for ``tta_merge``.
    """
    groups = []
    for t in views:
        view = resize_image(image, t.view_extent)
        if t.hflipped:
            view = hflip_image(view)
        dets = [replace(d, image_id=image_id) for d in detector.infer(view)]
        groups.append((dets, t))
    return groups


@dataclass(frozen=True)
class OracleParams:
    seed: int = 0
    score_mean: float = 0.9
    score_spread: float = 0.05
    jitter_px: int = 0
    fp_rate: float = 0.0
    fn_rate: float = 0.0
    maskiou_noise: float = 0.0

    def __post_init__(self):
        for name in ("score_mean", "fn_rate"):
            check_unit_interval(getattr(self, name), name, f"$.{name}")
        for name in ("score_spread", "jitter_px", "fp_rate", "maskiou_noise"):
            check_non_negative(getattr(self, name), name, f"$.{name}")

    @classmethod
    def from_dict(cls, doc, path="$.detector.oracle"):
        if not isinstance(doc, dict):
            raise ConfigError("expected an object", path)
        doc = dict(doc)
        if "score_distribution" in doc:
            dist = doc.pop("score_distribution")
            if not isinstance(dist, (list, tuple)) or len(dist) != 2:
                raise ConfigError("must be [mean, spread]", f"{path}.score_distribution")
            doc["score_mean"], doc["score_spread"] = dist
        for key in doc:
            if key not in cls.__dataclass_fields__:
                raise ConfigError(f"unknown key {key!r}", f"{path}.{key}")
        try:
            return cls(**doc)
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[1], path + exc.path[1:]) from None
        except TypeError as exc:
            raise ConfigError(str(exc), path) from None


def _jitter_mask(mask, amount, shift):
    """Dilate (amount > 0) or erode (amount < 0) by ``|amount|`` px, then shift."""
    if amount > 0:
        mask = ndimage.binary_dilation(mask, iterations=amount)
    elif amount < 0:
        mask = ndimage.binary_erosion(mask, iterations=-amount)
    h, w = mask.shape
    dy, dx = max(-h + 1, min(h - 1, shift[0])), max(-w + 1, min(w - 1, shift[1]))
    if dx or dy:
        out = np.zeros_like(mask)
        ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
        xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
        out[yd, xd] = mask[ys, xs]
        mask = out
    return mask


def oracle_infer(image_id, gt: Dataset, p: OracleParams):
    """Synthesize detections for ``image_id`` from its ground truth.

    Every random quantity is drawn for every instance regardless of the
    parameter values, so runs with the same seed stay paired across
    settings: a larger ``jitter_px`` scales the same underlying draws.
    """
    if not gt.has_image(image_id):
        raise UnknownId(f"unknown image_id {image_id}")
    info = gt.image(image_id)
    rng = random_stream(p.seed, image_id)
    out = []
    for ann in gt.annotations_for(image_id):
        if ann.iscrowd:
            continue
        u_drop, u_score, u_size, u_dx, u_dy, u_noise = rng.random(6)
        if u_drop < p.fn_rate:
            continue
        truth = rle_decode(ann.mask)
        j = p.jitter_px
        amount = int(math.floor((2 * u_size - 1) * j + 0.5))
        shift = (
            int(math.floor((2 * u_dy - 1) * j / 2 + 0.5)),
            int(math.floor((2 * u_dx - 1) * j / 2 + 0.5)),
        )
        mask = _jitter_mask(truth, amount, shift) if j else truth
        if not mask.any():
            continue
        score = float(np.clip(p.score_mean + (2 * u_score - 1) * p.score_spread, 0.0, 1.0))
        true_iou = mask_iou(mask, truth)
        pred = float(np.clip(true_iou + (2 * u_noise - 1) * p.maskiou_noise, 0.0, 1.0))
        rle = ann.mask if mask is truth else rle_encode(mask)
        out.append(Detection(image_id, ann.category_id, mask_to_bbox(mask), rle, score, pred))

    n_fp = int(rng.poisson(p.fp_rate)) if p.fp_rate > 0 else 0
    cats = sorted(c.id for c in gt.categories)
    for _ in range(n_fp):
        w = int(rng.integers(1, max(2, info.width // 4) + 1))
        h = int(rng.integers(1, max(2, info.height // 4) + 1))
        w, h = min(w, info.width), min(h, info.height)
        x = int(rng.integers(0, info.width - w + 1))
        y = int(rng.integers(0, info.height - h + 1))
        mask = np.zeros((info.height, info.width), dtype=bool)
        mask[y : y + h, x : x + w] = True
        score = float(rng.uniform(0.0, 0.3))
        pred = float(np.clip(rng.uniform(-1.0, 1.0) * p.maskiou_noise, 0.0, 1.0))
        cat = cats[int(rng.integers(0, len(cats)))] if cats else 1
        out.append(Detection(image_id, cat, BBox(float(x), float(y), float(w), float(h)), rle_encode(mask), score, pred))
    return out


class OracleDetector:
    """Binds :func:`oracle_infer` to one dataset; ``detect`` is keyed by image id."""

    def __init__(self, gt: Dataset, params: OracleParams):
        self.gt = gt
        self.params = params
        self._cache = {}

    def detect(self, image_id, view: TtaTransform):
        if image_id not in self._cache:
            self._cache = {image_id: oracle_infer(image_id, self.gt, self.params)}
        return forward_map(self._cache[image_id], view)


class ResultsFileDetector:
    """Pre-computed detections, one COCO results file per TTA view name."""

    def __init__(self, files: dict):
        self.files = dict(files)
        self._cache = {}

    def detect(self, image_id, view: TtaTransform):
        if view.name not in self.files:
            raise ConfigError(f"no results file for view {view.name!r}", "$.detector.results_files")
        if view.name not in self._cache:
            by_image = {}
            for d in load_results(self.files[view.name]):
                by_image.setdefault(d.image_id, []).append(d)
            self._cache[view.name] = by_image
        return list(self._cache[view.name].get(image_id, []))


# -- synthetic data -----------------------------------------------------------

def make_synthetic_dataset(n_images=10, height=256, width=256, max_instances=4, seed=0, category_name="human"):
    """Ground truth of non-overlapping ellipses ("people"), one category.

    No image files are referenced; the oracle pipeline never reads pixels.
    """
    rng = random_stream(seed, 0xDA7A)
    images, anns = [], []
    yy, xx = np.mgrid[0:height, 0:width]
    ann_id = 1
    for image_id in range(1, n_images + 1):
        images.append(ImageInfo(image_id, f"synthetic_{image_id:05d}.png", height, width))
        occupied = np.zeros((height, width), dtype=bool)
        for _ in range(int(rng.integers(1, max_instances + 1))):
            for _attempt in range(20):
                ry = rng.uniform(0.08, 0.2) * height
                rx = rng.uniform(0.04, 0.1) * width
                cy = rng.uniform(ry, height - ry)
                cx = rng.uniform(rx, width - rx)
                mask = ((yy + 0.5 - cy) / ry) ** 2 + ((xx + 0.5 - cx) / rx) ** 2 <= 1.0
                if mask.any() and not (mask & occupied).any():
                    occupied |= mask
                    anns.append(
                        Annotation(ann_id, image_id, 1, mask_to_bbox(mask), rle_encode(mask), mask_area(mask))
                    )
                    ann_id += 1
                    break
    return Dataset(images, anns, [Category(1, category_name)])


def ground_truth_as_detections(gt: Dataset, score=1.0):
    return [
        Detection(a.image_id, a.category_id, a.bbox, a.mask, score)
        for a in gt.annotations
        if not a.iscrowd
    ]


# -- pipeline ------------------------------------------------------------------

_TOP_KEYS = ("dataset", "detector", "tta", "postprocess", "eval", "seed")


@dataclass
class PipelineConfig:
    dataset: object  # path or an in-memory Dataset
    detector: object  # OracleParams or {view name: path}
    tta: list  # [(scale, hflip), ...]
    postprocess: SoftNmsParams
    eval: EvalParams
    seed: int = 0

    @classmethod
    def from_dict(cls, doc, base_dir=None):
        if not isinstance(doc, dict):
            raise ConfigError("pipeline config must be a JSON object")
        for key in doc:
            if key not in _TOP_KEYS:
                raise ConfigError(f"unknown key {key!r}", f"$.{key}")
        base = Path(base_dir) if base_dir is not None else None

        def resolve(value, path):
            if isinstance(value, Dataset):
                return value
            if not isinstance(value, str) or not value:
                raise ConfigError("expected a file path", path)
            pth = Path(value)
            return pth if base is None or pth.is_absolute() else base / pth

        if "dataset" not in doc:
            raise ConfigError("missing required key 'dataset'")
        dataset = resolve(doc["dataset"], "$.dataset")

        seed = doc.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {seed!r}", "$.seed")

        det = doc.get("detector", {"oracle": {}})
        if not isinstance(det, dict) or len(det) != 1 or next(iter(det)) not in ("oracle", "results_files"):
            raise ConfigError("detector must be {'oracle': {...}} or {'results_files': {...}}", "$.detector")
        if "oracle" in det:
            oracle_doc = dict(det["oracle"]) if isinstance(det["oracle"], dict) else det["oracle"]
            if isinstance(oracle_doc, dict):
                oracle_doc.setdefault("seed", seed)
            detector = OracleParams.from_dict(oracle_doc)
        else:
            files = det["results_files"]
            if not isinstance(files, dict) or not files:
                raise ConfigError("expected a non-empty {view name: path} map", "$.detector.results_files")
            detector = {k: resolve(v, f"$.detector.results_files.{k}") for k, v in files.items()}

        tta_doc = doc.get("tta", [{"scale": 1.0, "hflip": False}])
        if not isinstance(tta_doc, list) or not tta_doc:
            raise ConfigError("expected a non-empty list of views", "$.tta")
        tta = []
        for i, view in enumerate(tta_doc):
            path = f"$.tta[{i}]"
            if not isinstance(view, dict):
                raise ConfigError("expected {scale, hflip}", path)
            for key in view:
                if key not in ("scale", "hflip"):
                    raise ConfigError(f"unknown key {key!r}", f"{path}.{key}")
            scale = view.get("scale", 1.0)
            if isinstance(scale, bool) or not isinstance(scale, (int, float)) or not scale > 0:
                raise ConfigError(f"scale must be a positive number, got {scale!r}", f"{path}.scale")
            hflip = view.get("hflip", False)
            if not isinstance(hflip, bool):
                raise ConfigError(f"hflip must be a boolean, got {hflip!r}", f"{path}.hflip")
            tta.append((float(scale), hflip))

        post = SoftNmsParams.from_dict(doc.get("postprocess", {}), "$.postprocess")
        ev = EvalParams.from_dict(doc.get("eval", {}), "$.eval")
        return cls(dataset, detector, tta, post, ev, seed)

    @classmethod
    def from_json(cls, path):
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from None
        return cls.from_dict(doc, base_dir=path.parent)


FULL_TTA = [(s, f) for s in (1.0, 1.5, 2.0, 2.5, 3.0) for f in (False, True)]


def run_pipeline(config, results_path=None, image_ids: Optional[list] = None):
    """Run detection -> calibration -> TTA fusion -> evaluation.

    ``config`` is a :class:`PipelineConfig` or a config dict. Returns the
    :class:`EvalReport` and the merged detections; the detections are also
    written as a COCO results file when ``results_path`` is given.
    ``image_ids`` overrides the processing order (the output does not
    depend on it).
    """
    if not isinstance(config, PipelineConfig):
        config = PipelineConfig.from_dict(config)
    gt = config.dataset if isinstance(config.dataset, Dataset) else load_coco(config.dataset)
    if isinstance(config.detector, OracleParams):
        detector = OracleDetector(gt, config.detector)
    else:
        detector = ResultsFileDetector(config.detector)

    ids = list(image_ids) if image_ids is not None else [im.id for im in gt.images]
    merged = {}
    for image_id in ids:
        info = gt.image(image_id)
        views = [TtaTransform(s, f, (info.height, info.width)) for s, f in config.tta]
        groups = [(calibrate_scores(detector.detect(image_id, t)), t) for t in views]
        merged[image_id] = tta_merge(groups, config.postprocess)

    dets = [d for im in gt.images if im.id in merged for d in merged[im.id]]
    report = evaluate(dets, gt, config.eval)
    if results_path is not None:
        write_results(dets, results_path)
    return report, dets


__all__ = [
    "Detector",
    "EvalReport",
    "FULL_TTA",
    "OracleDetector",
    "OracleParams",
    "PipelineConfig",
    "ResultsFileDetector",
    "default_tta_views",
    "detect_views",
    "ground_truth_as_detections",
    "make_synthetic_dataset",
    "oracle_infer",
    "run_pipeline",
]
