"""Fast randomized invariant checks behind ``segkit selftest``."""

from __future__ import annotations

import math
import sys

import numpy as np

from .augment import AugmentConfig, Instance, Sample, copy_paste, plan_geometry, apply_geometry
from .dataset_io import Detection, rle_from_string, rle_to_string
from .evaluator import evaluate
from .harness import ground_truth_as_detections, make_synthetic_dataset
from .mask_core import BBox, box_iou, mask_iou, rle_decode, rle_encode
from .postprocess import SoftNmsParams, soft_nms
from .swa import average_checkpoints, from_bytes, to_bytes


def check_rle_roundtrip(rng):
    for bits in range(512):
        m = np.array([(bits >> k) & 1 for k in range(9)], dtype=bool).reshape(3, 3)
        assert np.array_equal(rle_decode(rle_encode(m)), m)
    for _ in range(200):
        m = rng.random((int(rng.integers(1, 20)), int(rng.integers(1, 20)))) < rng.random()
        rle = rle_encode(m)
        assert np.array_equal(rle_decode(rle), m)
        assert rle_from_string(rle_to_string(rle.counts)) == rle.counts


def check_iou(rng):
    for _ in range(200):
        a, b = rng.random((2, 16, 16)) < 0.5
        union = np.count_nonzero(a | b)
        expected = np.count_nonzero(a & b) / union if union else 0.0
        assert mask_iou(a, b) == expected == mask_iou(b, a)
    assert math.isclose(box_iou((0, 0, 2, 2), (1, 1, 2, 2)), 1 / 7)


def check_soft_nms(rng):
    m = rle_encode(np.ones((4, 4), dtype=bool))
    dets = [Detection(1, 1, BBox(0, 0, 4, 4), m, 0.9), Detection(1, 1, BBox(0, 0, 4, 4), m, 0.8)]
    out = soft_nms(dets, SoftNmsParams(sigma=0.5))
    assert abs(out[1].score - 0.8 * math.exp(-2)) <= 1e-9


def check_copy_paste(rng):
    cfg = AugmentConfig(copy_paste_max_instances=3, visibility_threshold=0.3)
    for _ in range(20):
        h, w = 24, 24
        def blobs(n):
            out = []
            for _ in range(n):
                m = np.zeros((h, w), dtype=bool)
                y, x = rng.integers(0, 16, 2)
                m[y : y + 8, x : x + 8] = True
                out.append(Instance(m))
            return out
        t = Sample(rng.integers(0, 256, (h, w, 3), dtype=np.uint8), blobs(1), 1)
        s = Sample(rng.integers(0, 256, (h, w, 3), dtype=np.uint8), blobs(3), 2)
        out = copy_paste(t, s, cfg, rng)
        ok = (out.image == t.image) | (out.image == s.image)
        assert ok.all()
        masks = [i.mask for i in out.instances]
        for i in range(len(masks)):
            for j in range(i + 1, len(masks)):
                assert not (masks[i] & masks[j]).any()


def check_geometry(rng):
    cfg = AugmentConfig()
    for _ in range(20):
        h, w = int(rng.integers(1, 200)), int(rng.integers(1, 200))
        plan = plan_geometry(h, w, cfg, rng)
        assert max(plan.resized_hw) <= cfg.long_side_cap
        out = apply_geometry(Sample(np.zeros((h, w, 3), np.uint8)), plan)
        assert out.image.shape == (1440, 1920, 3)


def check_swa(rng):
    ck = {"a": rng.standard_normal((3, 2)).astype(np.float32)}
    avg = average_checkpoints([ck, ck, ck])
    assert avg["a"].tobytes() == ck["a"].tobytes()
    assert to_bytes(from_bytes(to_bytes(ck))) == to_bytes(ck)


def check_perfect_eval(rng):
    gt = make_synthetic_dataset(5, 64, 64, seed=int(rng.integers(0, 1000)))
    assert evaluate(ground_truth_as_detections(gt), gt).map == 1.0


CHECKS = [
    check_rle_roundtrip,
    check_iou,
    check_soft_nms,
    check_copy_paste,
    check_geometry,
    check_swa,
    check_perfect_eval,
]


def run_all(seed=0, out=sys.stdout):
    ok = True
    for k, check in enumerate(CHECKS):
        rng = np.random.default_rng([seed, k])
        name = check.__name__.removeprefix("check_")
        try:
            check(rng)
        except AssertionError as exc:
            ok = False
            print(f"FAIL {name} {exc}", file=out)
        else:
            print(f"PASS {name}", file=out)
    return ok
