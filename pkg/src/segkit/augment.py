"""Training-time augmentation stages, each driven by a seeded random stream.

Each stage exists twice: as a pure function ``op(sample, cfg, rng)`` and as
a scikit-learn style transformer that maps a list of samples, drawing one
child random stream per ``(random_state, image_id, stage)``. The transformers
compose with :class:`sklearn.pipeline.Pipeline`; the default order is
photometric -> copy-paste -> geometric (see :func:`make_augment_pipeline`).
"""

from __future__ import annotations

import json
import math
import numbers
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.pipeline import Pipeline

from .dataset_io import Annotation, Dataset
from .errors import ConfigError, EmptySource, IoError, ParseError, ShapeMismatch
from .imaging import DEFAULT_PAD_FILL, hflip_image, pad_image, photometric_adjust, resize_image
from .mask_core import mask_area, mask_to_bbox, resize_mask, rle_decode, rle_encode
from .rng import random_stream
from .validation import (
    check_image,
    check_non_negative,
    check_random_state,
    check_range,
    check_unit_interval,
)

PHOTOMETRIC_ORDER = ("brightness", "contrast", "saturation", "hue")

# child-stream keys, one per stage
_PHOTOMETRIC, _COPY_PASTE, _GEOMETRIC = 0, 1, 2


@dataclass
class AugmentConfig:
    brightness_delta_max: int = 32
    contrast_range: tuple = (0.5, 1.5)
    saturation_range: tuple = (0.5, 1.5)
    hue_delta_max: float = 18.0
    scale_short_range: tuple = (820, 3080)
    long_side_cap: int = 3680
    crop_pad_target: tuple = (1920, 1440)  # (width, height)
    hflip_prob: float = 0.5
    copy_paste_max_instances: int = 4
    visibility_threshold: float = 0.1

    def __post_init__(self):
        for name in ("contrast_range", "saturation_range", "scale_short_range", "crop_pad_target"):
            value = getattr(self, name)
            if isinstance(value, list):
                setattr(self, name, tuple(value))
        self.validate()

    def validate(self):
        _check_int(self.brightness_delta_max, "brightness_delta_max", lower=0)
        check_range(self.contrast_range, "contrast_range", "$.contrast_range", lower=0)
        check_range(self.saturation_range, "saturation_range", "$.saturation_range", lower=0)
        check_non_negative(self.hue_delta_max, "hue_delta_max", "$.hue_delta_max")
        lo, hi = check_range(self.scale_short_range, "scale_short_range", "$.scale_short_range", lower=1)
        _check_int(lo, "scale_short_range[0]", lower=1)
        _check_int(hi, "scale_short_range[1]", lower=1)
        _check_int(self.long_side_cap, "long_side_cap", lower=1)
        try:
            tw, th = self.crop_pad_target
        except (TypeError, ValueError):
            raise ConfigError("crop_pad_target must be (width, height)", "$.crop_pad_target") from None
        _check_int(tw, "crop_pad_target[0]", lower=1)
        _check_int(th, "crop_pad_target[1]", lower=1)
        check_unit_interval(self.hflip_prob, "hflip_prob", "$.hflip_prob")
        _check_int(self.copy_paste_max_instances, "copy_paste_max_instances", lower=0)
        check_unit_interval(self.visibility_threshold, "visibility_threshold", "$.visibility_threshold")
        return self

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("augment config must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in doc:
            if key not in known:
                raise ConfigError(f"unknown key {key!r}", f"$.{key}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path):
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from None
        return cls.from_dict(doc)

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _check_int(value, name, lower=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigError(f"{name} must be an integer, got {value!r}", f"$.{name}")
    if lower is not None and value < lower:
        raise ConfigError(f"{name} must be >= {lower}, got {value!r}", f"$.{name}")
    return int(value)


@dataclass(frozen=True)
class Instance:
    mask: np.ndarray
    category_id: int = 1
    iscrowd: bool = False
    id: Optional[int] = None

    @property
    def area(self):
        return mask_area(self.mask)

    @property
    def bbox(self):
        return mask_to_bbox(self.mask)


@dataclass
class Sample:
    """An image plus its instances with masks in bitmap form."""

    image: np.ndarray
    instances: list = field(default_factory=list)
    image_id: int = 0

    def __post_init__(self):
        self.image = check_image(self.image)
        for inst in self.instances:
            if inst.mask.shape != self.image.shape[:2]:
                raise ShapeMismatch(
                    f"instance mask {inst.mask.shape} does not match image {self.image.shape[:2]}"
                )

    @classmethod
    def from_dataset(cls, ds: Dataset, image_id, image=None):
        info = ds.image(image_id)
        if image is None:
            image = np.zeros((info.height, info.width, 3), dtype=np.uint8)
        instances = [
            Instance(rle_decode(a.mask), a.category_id, a.iscrowd, a.id)
            for a in ds.annotations_for(image_id)
        ]
        return cls(image, instances, image_id)

    def to_annotations(self, next_id=1):
        """Convert instances back to annotations; instances lacking an id get fresh ones."""
        used = {inst.id for inst in self.instances if inst.id is not None}
        out = []
        for inst in self.instances:
            ann_id = inst.id
            if ann_id is None:
                while next_id in used:
                    next_id += 1
                ann_id = next_id
                used.add(ann_id)
            out.append(
                Annotation(
                    id=ann_id,
                    image_id=self.image_id,
                    category_id=inst.category_id,
                    bbox=inst.bbox,
                    mask=rle_encode(inst.mask),
                    area=inst.area,
                    iscrowd=inst.iscrowd,
                )
            )
        return out


# -- photometric -------------------------------------------------------------

def draw_photometric_params(cfg: AugmentConfig, rng):
    """Draw ``(op, value or None)`` for the four ops in fixed order.

    Each op consumes one skip draw and one parameter draw whether or not it is
    applied, so the stream position never depends on earlier outcomes.
    """
    params = []
    for op in PHOTOMETRIC_ORDER:
        apply = rng.random() < 0.5
        if op == "brightness":
            d = cfg.brightness_delta_max
            value = int(rng.integers(-d, d + 1))
        elif op == "contrast":
            value = float(rng.uniform(*cfg.contrast_range))
        elif op == "saturation":
            value = float(rng.uniform(*cfg.saturation_range))
        else:
            value = float(rng.uniform(-cfg.hue_delta_max, cfg.hue_delta_max))
        params.append((op, value if apply else None))
    return params


def photometric_distortion(sample: Sample, cfg: AugmentConfig, rng) -> Sample:
    image = sample.image
    for op, value in draw_photometric_params(cfg, rng):
        if value is not None:
            image = photometric_adjust(image, op, value)
    return replace(sample, image=image if image is not sample.image else image.copy())


# -- copy-paste --------------------------------------------------------------

def copy_paste(target: Sample, source: Sample, cfg: AugmentConfig, rng) -> Sample:
    """Paste a random subset of ``source`` instances on top of ``target``.

    The source is resampled to the target extent first. Later pastes occlude
    earlier ones, every surviving mask is clipped to its visible part, and an
    instance is dropped when its visible area falls below
    ``visibility_threshold`` times its area before pasting. Pasted masks come
    out pairwise disjoint and disjoint from all target masks.
    """
    candidates = [inst for inst in source.instances if not inst.iscrowd]
    if not candidates:
        raise EmptySource(f"source image {source.image_id} has no non-crowd instances")
    h, w = target.image.shape[:2]
    src_image = source.image
    if src_image.shape[:2] != (h, w):
        src_image = resize_image(src_image, (h, w))
        candidates = [replace(inst, mask=resize_mask(inst.mask, (h, w))) for inst in candidates]
    # an instance that vanished in resampling has nothing to paste
    candidates = [inst for inst in candidates if inst.mask.any()]

    limit = min(cfg.copy_paste_max_instances, len(candidates))
    if limit == 0:
        return replace(target, image=target.image.copy(), instances=list(target.instances))
    count = int(rng.integers(1, limit + 1))
    chosen = [candidates[i] for i in rng.choice(len(candidates), size=count, replace=False)]

    covered = np.zeros((h, w), dtype=bool)
    pasted = []
    for inst in reversed(chosen):
        visible = inst.mask & ~covered
        covered |= inst.mask
        pasted.append((inst, visible))
    pasted.reverse()

    image = np.where(covered[..., None], src_image, target.image)
    thr = cfg.visibility_threshold
    out = []
    for inst in target.instances:
        visible = inst.mask & ~covered
        if mask_area(visible) >= thr * inst.area:
            out.append(replace(inst, mask=visible))
    for inst, visible in pasted:
        if mask_area(visible) >= thr * inst.area:
            out.append(Instance(visible, inst.category_id, False, None))
    return Sample(image, out, target.image_id)


# -- geometric ---------------------------------------------------------------

@dataclass(frozen=True)
class GeometryPlan:
    input_hw: tuple
    resized_hw: tuple
    crop_xy: tuple  # (x0, y0) of the crop in the resized frame
    output_hw: tuple
    hflip: bool

    @property
    def crop_hw(self):
        return (min(self.resized_hw[0], self.output_hw[0]), min(self.resized_hw[1], self.output_hw[1]))


def resized_extent(height, width, short_target, long_side_cap):
    """Scale so the short side hits ``short_target``, capping the long side."""
    short, long = min(height, width), max(height, width)
    scale = short_target / short
    if long * scale > long_side_cap:
        scale = long_side_cap / long
    return (max(1, math.floor(height * scale + 0.5)), max(1, math.floor(width * scale + 0.5)))


def plan_geometry(height, width, cfg: AugmentConfig, rng) -> GeometryPlan:
    lo, hi = cfg.scale_short_range
    short_target = int(rng.integers(lo, hi + 1))
    rh, rw = resized_extent(height, width, short_target, cfg.long_side_cap)
    tw, th = cfg.crop_pad_target
    x0 = int(rng.integers(0, rw - tw + 1)) if rw > tw else 0
    y0 = int(rng.integers(0, rh - th + 1)) if rh > th else 0
    flip = bool(rng.random() < cfg.hflip_prob)
    return GeometryPlan((height, width), (rh, rw), (x0, y0), (th, tw), flip)


def apply_geometry(sample: Sample, plan: GeometryPlan, fill=DEFAULT_PAD_FILL) -> Sample:
    rh, rw = plan.resized_hw
    ch, cw = plan.crop_hw
    x0, y0 = plan.crop_xy
    window = (y0, x0, ch, cw)
    image = pad_image(resize_image(sample.image, (rh, rw), window=window), plan.output_hw, fill)
    if plan.hflip:
        image = hflip_image(image)
    out = []
    for inst in sample.instances:
        mask = resize_mask(inst.mask, (rh, rw), window=window)
        if not mask.any():
            continue
        full = np.zeros(plan.output_hw, dtype=bool)
        full[:ch, :cw] = mask
        if plan.hflip:
            full = np.ascontiguousarray(full[:, ::-1])
        out.append(replace(inst, mask=full))
    return Sample(image, out, sample.image_id)


def geometric_pipeline(sample: Sample, cfg: AugmentConfig, rng, fill=DEFAULT_PAD_FILL) -> Sample:
    """Random rescale, crop and pad to ``crop_pad_target``, then random hflip.

    Instances with no pixels left after cropping are dropped.
    """
    h, w = sample.image.shape[:2]
    return apply_geometry(sample, plan_geometry(h, w, cfg, rng), fill)


# -- estimators --------------------------------------------------------------

class _StatelessTransformer(TransformerMixin, BaseEstimator):
    def fit(self, X=None, y=None):
        self._config()
        return self

    def __sklearn_is_fitted__(self):
        return True

    def _config(self):
        raise NotImplementedError


class PhotometricDistortion(_StatelessTransformer):
    """Random brightness, contrast, saturation and hue, each applied with p=0.5."""

    def __init__(
        self,
        brightness_delta_max=32,
        contrast_range=(0.5, 1.5),
        saturation_range=(0.5, 1.5),
        hue_delta_max=18.0,
        random_state=0,
    ):
        self.brightness_delta_max = brightness_delta_max
        self.contrast_range = contrast_range
        self.saturation_range = saturation_range
        self.hue_delta_max = hue_delta_max
        self.random_state = random_state

    def _config(self):
        return AugmentConfig(
            brightness_delta_max=self.brightness_delta_max,
            contrast_range=tuple(self.contrast_range),
            saturation_range=tuple(self.saturation_range),
            hue_delta_max=self.hue_delta_max,
        )

    def transform(self, X):
        cfg = self._config()
        seed = check_random_state(self.random_state)
        return [
            photometric_distortion(s, cfg, random_stream(seed, s.image_id, _PHOTOMETRIC))
            for s in X
        ]


class CopyPaste(TransformerMixin, BaseEstimator):
    """Copy-paste augmentation; ``fit`` records the pool of source samples.

    For each target a source is drawn uniformly from the pool, excluding the
    target's own image when another candidate exists. Targets for which no
    source is available pass through unchanged.
    """

    def __init__(self, max_instances=4, visibility_threshold=0.1, random_state=0):
        self.max_instances = max_instances
        self.visibility_threshold = visibility_threshold
        self.random_state = random_state

    def fit(self, X, y=None):
        self._config()
        # sorted so the source drawn for a target does not depend on batch order
        pool = [s for s in X if any(not i.iscrowd for i in s.instances)]
        self.sources_ = sorted(pool, key=lambda s: s.image_id)
        return self

    def _config(self):
        return AugmentConfig(
            copy_paste_max_instances=self.max_instances,
            visibility_threshold=self.visibility_threshold,
        )

    def transform(self, X):
        if not hasattr(self, "sources_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("CopyPaste needs fit(samples) to collect paste sources")
        cfg = self._config()
        seed = check_random_state(self.random_state)
        out = []
        for target in X:
            rng = random_stream(seed, target.image_id, _COPY_PASTE)
            pool = [s for s in self.sources_ if s.image_id != target.image_id] or self.sources_
            if not pool:
                out.append(replace(target, image=target.image.copy(), instances=list(target.instances)))
                continue
            source = pool[int(rng.integers(0, len(pool)))]
            out.append(copy_paste(target, source, cfg, rng))
        return out


class GeometricPipeline(_StatelessTransformer):
    """Rescale within ``scale_short_range`` (long side capped), crop/pad, hflip."""

    def __init__(
        self,
        scale_short_range=(820, 3080),
        long_side_cap=3680,
        crop_pad_target=(1920, 1440),
        hflip_prob=0.5,
        pad_fill=DEFAULT_PAD_FILL,
        random_state=0,
    ):
        self.scale_short_range = scale_short_range
        self.long_side_cap = long_side_cap
        self.crop_pad_target = crop_pad_target
        self.hflip_prob = hflip_prob
        self.pad_fill = pad_fill
        self.random_state = random_state

    def _config(self):
        return AugmentConfig(
            scale_short_range=tuple(self.scale_short_range),
            long_side_cap=self.long_side_cap,
            crop_pad_target=tuple(self.crop_pad_target),
            hflip_prob=self.hflip_prob,
        )

    def transform(self, X):
        cfg = self._config()
        seed = check_random_state(self.random_state)
        return [
            geometric_pipeline(s, cfg, random_stream(seed, s.image_id, _GEOMETRIC), self.pad_fill)
            for s in X
        ]


def make_augment_pipeline(cfg: Optional[AugmentConfig] = None, random_state=0, pad_fill=DEFAULT_PAD_FILL):
    """Photometric -> copy-paste -> geometric as an sklearn Pipeline.

    Use ``fit_transform(samples)``: fitting the copy-paste step records the
    photometrically distorted batch as its source pool.
    """
    cfg = cfg or AugmentConfig()
    return Pipeline(
        [
            (
                "photometric",
                PhotometricDistortion(
                    cfg.brightness_delta_max,
                    cfg.contrast_range,
                    cfg.saturation_range,
                    cfg.hue_delta_max,
                    random_state,
                ),
            ),
            ("copy_paste", CopyPaste(cfg.copy_paste_max_instances, cfg.visibility_threshold, random_state)),
            (
                "geometric",
                GeometricPipeline(
                    cfg.scale_short_range,
                    cfg.long_side_cap,
                    cfg.crop_pad_target,
                    cfg.hflip_prob,
                    pad_fill,
                    random_state,
                ),
            ),
        ]
    )

