"""COCO dataset ingestion and results serialization."""

from __future__ import annotations

import json
import numbers
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import IoError, MalformedRle, MaskError, ParseError, SchemaError
from .mask_core import BBox, RleMask, mask_area, mask_to_bbox, rle_decode, rle_encode


@dataclass(frozen=True)
class ImageInfo:
    id: int
    file_name: str
    height: int
    width: int


@dataclass(frozen=True)
class Category:
    id: int
    name: str


@dataclass(frozen=True)
class Annotation:
    id: int
    image_id: int
    category_id: int
    bbox: BBox
    mask: RleMask
    area: int
    iscrowd: bool = False


@dataclass(frozen=True)
class Detection:
    image_id: int
    category_id: int
    bbox: BBox
    mask: RleMask
    score: float
    mask_iou_pred: Optional[float] = None


@dataclass
class Dataset:
    images: list = field(default_factory=list)
    annotations: list = field(default_factory=list)
    categories: list = field(default_factory=list)
    root: Optional[Path] = None

    def image(self, image_id):
        return self._image_index()[image_id]

    def has_image(self, image_id):
        return image_id in self._image_index()

    def annotations_for(self, image_id):
        return [a for a in self.annotations if a.image_id == image_id]

    def image_path(self, image_id):
        name = Path(self.image(image_id).file_name)
        return name if self.root is None or name.is_absolute() else self.root / name

    def _image_index(self):
        index = getattr(self, "_index", None)
        if index is None or len(index) != len(self.images):
            index = {im.id: im for im in self.images}
            self._index = index
        return index


# -- compressed RLE strings -------------------------------------------------

def rle_to_string(counts):
    """COCO compressed-RLE string: delta-coded counts, 5-bit LEB128-style groups."""
    out = []
    for i, value in enumerate(counts):
        x = int(value)
        if i > 2:
            x -= int(counts[i - 2])
        more = True
        while more:
            c = x & 0x1F
            x >>= 5
            more = (x != -1) if (c & 0x10) else (x != 0)
            if more:
                c |= 0x20
            out.append(chr(c + 48))
    return "".join(out)


def rle_from_string(s):
    counts = []
    p = 0
    n = len(s)
    while p < n:
        x = 0
        k = 0
        more = True
        while more:
            if p >= n:
                raise MalformedRle("truncated compressed RLE string")
            c = ord(s[p]) - 48
            if c < 0 or c > 0x3F:
                raise MalformedRle(f"invalid character {s[p]!r} in compressed RLE")
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return tuple(counts)


def rle_to_coco(rle: RleMask):
    return {"size": [rle.height, rle.width], "counts": rle_to_string(rle.counts)}


def rle_from_coco(obj, height=None, width=None):
    """Parse a COCO ``segmentation`` RLE dict (compressed or list counts)."""
    try:
        h, w = (int(v) for v in obj["size"])
        counts = obj["counts"]
    except (KeyError, TypeError, ValueError) as exc:
        raise MaskError(f"RLE segmentation needs 'size' and 'counts': {exc}") from None
    if height is not None and (h, w) != (height, width):
        raise MaskError(f"RLE size {h}x{w} does not match image {height}x{width}")
    if isinstance(counts, (str, bytes)):
        if isinstance(counts, bytes):
            counts = counts.decode("ascii")
        try:
            counts = rle_from_string(counts)
        except MalformedRle as exc:
            raise MaskError(str(exc)) from None
    elif isinstance(counts, list) and all(isinstance(c, numbers.Integral) for c in counts):
        counts = tuple(int(c) for c in counts)
    else:
        raise MaskError("RLE counts must be a string or a list of integers")
    rle = RleMask(h, w, counts)
    try:
        mask = rle_decode(rle)
    except MalformedRle as exc:
        raise MaskError(str(exc)) from None
    # re-encode so stored counts are canonical (no interior empty runs)
    return rle_encode(mask), mask


# -- polygons ---------------------------------------------------------------

def rasterize_polygon(coords, height, width):
    """Even-odd fill of one polygon sampled at pixel centers (c + 0.5, r + 0.5)."""
    pts = np.asarray(coords, dtype=np.float64)
    if pts.ndim != 1 or pts.size < 6 or pts.size % 2:
        raise MaskError(f"polygon needs an even number (>= 6) of coordinates, got {pts.size}")
    if not np.all(np.isfinite(pts)):
        raise MaskError("polygon coordinates must be finite")
    xs, ys = pts[0::2], pts[1::2]
    xe, ye = np.roll(xs, -1), np.roll(ys, -1)
    yc = np.arange(height, dtype=np.float64) + 0.5
    xc = np.arange(width, dtype=np.float64) + 0.5
    inside = np.zeros((height, width), dtype=bool)
    for x0, y0, x1, y1 in zip(xs, ys, xe, ye):
        if y0 == y1:
            continue
        # half-open span so a vertex shared by two edges is counted once
        lo, hi = min(y0, y1), max(y0, y1)
        rows = np.flatnonzero((yc >= lo) & (yc < hi))
        if rows.size == 0:
            continue
        xcross = x0 + (yc[rows] - y0) * (x1 - x0) / (y1 - y0)
        inside[rows] ^= xc[None, :] < xcross[:, None]
    return inside


def rasterize_polygons(polys, height, width):
    if not isinstance(polys, list) or not polys:
        raise MaskError("polygon segmentation must be a non-empty list")
    mask = np.zeros((height, width), dtype=bool)
    for poly in polys:
        mask |= rasterize_polygon(poly, height, width)
    return mask


# -- loading ----------------------------------------------------------------

def _require(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"{where}: missing field {key!r}")
    return obj[key]


def _int_field(obj, key, where):
    value = _require(obj, key, where)
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise SchemaError(f"{where}.{key}: expected integer, got {value!r}")
    return int(value)


def parse_coco(doc, root=None) -> Dataset:
    if not isinstance(doc, dict):
        raise SchemaError("$: COCO document must be a JSON object")
    images = []
    for i, im in enumerate(_require(doc, "images", "$")):
        where = f"$.images[{i}]"
        images.append(
            ImageInfo(
                id=_int_field(im, "id", where),
                file_name=str(im.get("file_name", "")) if isinstance(im, dict) else "",
                height=_int_field(im, "height", where),
                width=_int_field(im, "width", where),
            )
        )
        if images[-1].height < 1 or images[-1].width < 1:
            raise SchemaError(f"{where}: image extent must be at least 1x1")
    categories = []
    for i, cat in enumerate(doc.get("categories", [])):
        where = f"$.categories[{i}]"
        categories.append(Category(_int_field(cat, "id", where), str(cat.get("name", ""))))

    image_index = {im.id: im for im in images}
    if len(image_index) != len(images):
        raise SchemaError("$.images: duplicate image id")
    cat_ids = {c.id for c in categories}
    if len(cat_ids) != len(categories):
        raise SchemaError("$.categories: duplicate category id")

    annotations = []
    seen = set()
    for i, ann in enumerate(_require(doc, "annotations", "$")):
        where = f"$.annotations[{i}]"
        ann_id = _int_field(ann, "id", where)
        image_id = _int_field(ann, "image_id", where)
        category_id = _int_field(ann, "category_id", where)
        seg = _require(ann, "segmentation", where)
        if ann_id in seen:
            raise SchemaError(f"{where}: duplicate annotation id {ann_id}")
        seen.add(ann_id)
        if image_id not in image_index:
            raise SchemaError(f"{where}: unknown image_id {image_id}")
        if category_id not in cat_ids:
            raise SchemaError(f"{where}: unknown category_id {category_id}")
        im = image_index[image_id]
        try:
            if isinstance(seg, dict):
                rle, mask = rle_from_coco(seg, im.height, im.width)
            else:
                mask = rasterize_polygons(seg, im.height, im.width)
                rle = rle_encode(mask)
        except MaskError as exc:
            raise MaskError(f"{where}.segmentation: {exc}") from None
        annotations.append(
            Annotation(
                id=ann_id,
                image_id=image_id,
                category_id=category_id,
                bbox=mask_to_bbox(mask),
                mask=rle,
                area=mask_area(mask),
                iscrowd=bool(ann.get("iscrowd", 0)),
            )
        )
    return Dataset(images, annotations, categories, root)


def load_coco(path) -> Dataset:
    """Load a COCO instance-segmentation file.

    Polygons are rasterized, compressed RLE is decoded, and every stored
    ``bbox``/``area`` is replaced by values recomputed from the mask.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return parse_coco(doc, root=path.parent)


def dataset_to_coco(ds: Dataset):
    return {
        "images": [
            {"id": im.id, "file_name": im.file_name, "height": im.height, "width": im.width}
            for im in ds.images
        ],
        "annotations": [
            {
                "id": a.id,
                "image_id": a.image_id,
                "category_id": a.category_id,
                "segmentation": rle_to_coco(a.mask),
                "area": a.area,
                "bbox": list(a.bbox),
                "iscrowd": int(a.iscrowd),
            }
            for a in ds.annotations
        ],
        "categories": [{"id": c.id, "name": c.name} for c in ds.categories],
    }


def write_coco(ds: Dataset, path):
    _write_json(dataset_to_coco(ds), path)


# -- results ----------------------------------------------------------------

def detection_to_dict(det: Detection):
    out = {
        "image_id": det.image_id,
        "category_id": det.category_id,
        "segmentation": rle_to_coco(det.mask),
        "bbox": [float(v) for v in det.bbox],
        "score": float(det.score),
    }
    if det.mask_iou_pred is not None:
        out["mask_iou_pred"] = float(det.mask_iou_pred)
    return out


def detection_from_dict(obj, where="$"):
    try:
        image_id = int(obj["image_id"])
        category_id = int(obj["category_id"])
        bbox = BBox(*(float(v) for v in obj["bbox"]))
        score = float(obj["score"])
        seg = obj["segmentation"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: bad detection record ({exc})") from None
    if not 0.0 <= score <= 1.0:
        raise SchemaError(f"{where}.score: must be in [0, 1], got {score}")
    pred = obj.get("mask_iou_pred")
    if pred is not None:
        pred = float(pred)
        if not 0.0 <= pred <= 1.0:
            raise SchemaError(f"{where}.mask_iou_pred: must be in [0, 1], got {pred}")
    try:
        rle, _ = rle_from_coco(seg)
    except MaskError as exc:
        raise MaskError(f"{where}.segmentation: {exc}") from None
    return Detection(image_id, category_id, bbox, rle, score, pred)


def results_to_json(dets):
    return json.dumps([detection_to_dict(d) for d in dets], separators=(",", ":"))


def write_results(dets, path):
    """Write detections as a COCO results array with compressed-RLE masks."""
    _write_text(results_to_json(dets), path)


def load_results(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if not isinstance(doc, list):
        raise SchemaError(f"{path}: results file must hold a JSON array")
    return [detection_from_dict(obj, f"$[{i}]") for i, obj in enumerate(doc)]


def _write_json(obj, path):
    _write_text(json.dumps(obj, separators=(",", ":")), path)


def _write_text(text, path):
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
