import sys

import numpy as np
import pytest

from segkit.dataset_io import Annotation, Category, Dataset, Detection, ImageInfo
from segkit.augment import Instance, Sample
from segkit.mask_core import BBox, mask_area, mask_to_bbox, rle_encode


def rect_mask(h, w, x, y, rw, rh):
    m = np.zeros((h, w), dtype=bool)
    m[y : y + rh, x : x + rw] = True
    return m


def make_dataset(masks_per_image, h, w, crowd=None):
    """Dataset from ``{image_id: [mask, ...]}``; ``crowd`` holds annotation ids marked crowd."""
    crowd = crowd or set()
    images, anns = [], []
    ann_id = 1
    for image_id, masks in masks_per_image.items():
        images.append(ImageInfo(image_id, f"{image_id}.png", h, w))
        for m in masks:
            anns.append(
                Annotation(ann_id, image_id, 1, mask_to_bbox(m), rle_encode(m), mask_area(m), ann_id in crowd)
            )
            ann_id += 1
    return Dataset(images, anns, [Category(1, "human")])


def det_from_mask(image_id, mask, score, category_id=1, pred=None):
    return Detection(image_id, category_id, mask_to_bbox(mask), rle_encode(mask), score, pred)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_eval_instance(rng, size=8, max_images=3, max_gts=5, max_dets=8):
    """Small random ground truth and detections, with score ties and crowd regions."""
    def rect():
        x0, x1 = sorted(int(v) for v in rng.integers(0, size + 1, 2))
        y0, y1 = sorted(int(v) for v in rng.integers(0, size + 1, 2))
        return rect_mask(size, size, x0, y0, max(1, x1 - x0), max(1, y1 - y0))

    n_images = int(rng.integers(1, max_images + 1))
    masks = {k: [] for k in range(1, n_images + 1)}
    for _ in range(int(rng.integers(0, max_gts + 1))):
        masks[int(rng.integers(1, n_images + 1))].append(rect())
    n_anns = sum(len(v) for v in masks.values())
    crowd = {a for a in range(1, n_anns + 1) if rng.random() < 0.15}
    gt = make_dataset(masks, size, size, crowd)
    dets = []
    for _ in range(int(rng.integers(0, max_dets + 1))):
        image_id = int(rng.integers(1, n_images + 1))
        score = float(rng.choice([0.2, 0.5, 0.9])) if rng.random() < 0.5 else float(rng.random())
        gts_here = masks[image_id]
        if gts_here and rng.random() < 0.6:
            # perturb a ground-truth mask so IoUs land near the thresholds
            m = gts_here[int(rng.integers(0, len(gts_here)))].copy()
            flips = rng.random(m.shape) < 0.08
            m ^= flips
            if not m.any():
                m = rect()
        else:
            m = rect()
        dets.append(det_from_mask(image_id, m, score))
    return dets, gt


def random_sample(rng, h, w, n, image_id, disjoint=False):
    """Random rectangles; with ``disjoint`` overlapping draws are rejected."""
    insts, covered = [], np.zeros((h, w), dtype=bool)
    for k in range(n):
        for _ in range(20):
            rw, rh = int(rng.integers(1, w)), int(rng.integers(1, h))
            x, y = int(rng.integers(0, w - rw + 1)), int(rng.integers(0, h - rh + 1))
            m = rect_mask(h, w, x, y, rw, rh)
            if not (disjoint and (m & covered).any()):
                break
        else:
            continue
        covered |= m
        insts.append(Instance(m, id=100 * image_id + k))
    return Sample(rng.integers(0, 256, (h, w, 3), dtype=np.uint8), insts, image_id)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.report_lines():
        terminalreporter.write_line(line)
