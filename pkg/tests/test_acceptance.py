"""Acceptance gate: one test per criterion, each at its stated tolerance.

Every test records a PASS/FAIL line; they are printed together at the end of
the pytest run (see ``pytest_terminal_summary`` in conftest) and when this
file is executed directly.
"""

import itertools
import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from segkit.augment import AugmentConfig, Instance, Sample, apply_geometry, copy_paste, plan_geometry
from segkit.dataset_io import Detection, results_to_json, rle_from_string, rle_to_string
from segkit.evaluator import evaluate
from segkit.harness import FULL_TTA, ground_truth_as_detections, make_synthetic_dataset, run_pipeline
from segkit.mask_core import BBox, box_iou, mask_iou, rle_decode, rle_encode
from segkit.postprocess import SoftNmsParams, TtaTransform, soft_nms, tta_merge
from segkit.rng import random_stream
from segkit.swa import average_checkpoints, from_bytes, to_bytes

from conftest import det_from_mask, make_dataset, random_eval_instance, random_sample, rect_mask
from oracles import brute_copy_paste, brute_force_map, pixel_iou, raster_box_iou

pytestmark = pytest.mark.acceptance

RESULTS = {}


@contextmanager
def criterion(number, title):
    start = time.perf_counter()
    try:
        yield
    except BaseException as exc:
        RESULTS[number] = f"FAIL  {number:>2}. {title}: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        raise
    RESULTS[number] = f"PASS  {number:>2}. {title} ({time.perf_counter() - start:.1f}s)"


def report_lines():
    return [RESULTS[k] for k in sorted(RESULTS)]


# -- 1 ------------------------------------------------------------------------

def test_01_perfect_prediction_identity():
    with criterion(1, "perfect predictions give map = 1.0 exactly on 50 images in < 5 s"):
        gt = make_synthetic_dataset(n_images=50, height=256, width=256, seed=1)
        dets = ground_truth_as_detections(gt)
        start = time.perf_counter()
        report = evaluate(dets, gt)
        elapsed = time.perf_counter() - start
        assert report.map == 1.0, report.map
        assert elapsed < 5.0, f"{elapsed:.2f}s"


# -- 2 ------------------------------------------------------------------------

def test_02_evaluator_oracle_equivalence():
    with criterion(2, "evaluate equals brute-force PR table on 500 instances; IoU 0.60 case gives 0.3"):
        rng = np.random.default_rng(2)
        for k in range(500):
            dets, gt = random_eval_instance(rng, max_images=3, max_gts=5, max_dets=8)
            got, want = evaluate(dets, gt).map, brute_force_map(dets, gt)
            assert got == want, f"instance {k}: {got!r} != {want!r}"
        g = rect_mask(10, 10, 0, 0, 10, 5)
        d = rect_mask(10, 10, 0, 0, 10, 3)
        assert pixel_iou(d, g) == 0.6
        got = evaluate([det_from_mask(1, d, 0.9)], make_dataset({1: [g]}, 10, 10)).map
        assert abs(got - 0.3) < 1e-12, got


# -- 3 ------------------------------------------------------------------------

def test_03_rle_codec():
    with criterion(3, "RLE round-trips all 512 3x3 masks and 10,000 random 32x32 masks"):
        failures = 0
        for code in range(512):
            m = np.array([(code >> k) & 1 for k in range(9)], dtype=bool).reshape(3, 3)
            rle = rle_encode(m)
            failures += not np.array_equal(rle_decode(rle), m)
            failures += rle_from_string(rle_to_string(rle.counts)) != rle.counts
        rng = np.random.default_rng(3)
        for _ in range(10_000):
            m = rng.random((32, 32)) < rng.random()
            rle = rle_encode(m)
            failures += not np.array_equal(rle_decode(rle), m)
            failures += rle_from_string(rle_to_string(rle.counts)) != rle.counts
        assert failures == 0, f"{failures} failures"


# -- 4 ------------------------------------------------------------------------

def test_04_iou_against_pixel_oracles():
    with criterion(4, "mask_iou exact and box_iou within 2e-3 of pixel oracles on 1,000 cases"):
        rng = np.random.default_rng(4)
        worst = 0.0
        for _ in range(1000):
            h, w = int(rng.integers(1, 24)), int(rng.integers(1, 24))
            a = rng.random((h, w)) < rng.random()
            b = rng.random((h, w)) < rng.random()
            assert mask_iou(a, b) == pixel_iou(a, b)
            boxes = []
            for _ in range(2):
                x, y = (int(v) for v in rng.integers(0, 900, 2))
                bw, bh = (int(v) for v in rng.integers(0, 100, 2))
                boxes.append(BBox(x, y, bw, bh))
            worst = max(worst, abs(box_iou(*boxes) - raster_box_iou(*boxes)))
        assert worst <= 2e-3, worst


# -- 5 ------------------------------------------------------------------------

def _box_det(box, score, category_id=1):
    m = rect_mask(64, 64, *box)
    return Detection(1, category_id, BBox(*map(float, box)), rle_encode(m), score)


def test_05_soft_nms_analytic():
    with criterion(5, "soft-NMS 0.8*e^-2 within 1e-9, byte-identical pass-throughs, sigma 1e-6 pruning"):
        a, b = _box_det((5, 5, 20, 20), 0.9), _box_det((5, 5, 20, 20), 0.8)
        out = soft_nms([a, b], SoftNmsParams(method="gaussian", sigma=0.5))
        assert abs(out[1].score - 0.8 * math.exp(-2)) <= 1e-9, out[1].score

        single = [_box_det((1, 2, 3, 4), 0.37)]
        assert results_to_json(soft_nms(single)) == results_to_json(single)
        disjoint = [_box_det((0, 0, 10, 10), 0.9), _box_det((30, 30, 10, 10), 0.6)]
        for method in ("gaussian", "linear"):
            assert results_to_json(soft_nms(disjoint, SoftNmsParams(method=method))) == results_to_json(disjoint)

        p = SoftNmsParams(sigma=1e-6, score_floor=0.01)
        rng = np.random.default_rng(5)
        for _ in range(50):
            box = tuple(int(v) for v in rng.integers(0, 30, 2)) + tuple(int(v) for v in rng.integers(1, 30, 2))
            scores = sorted(rng.uniform(0.05, 1.0, int(rng.integers(2, 6))), reverse=True)
            dups = [_box_det(box, float(s)) for s in scores]
            assert soft_nms(dups, p) == dups[:1]


# -- 6 ------------------------------------------------------------------------

def test_06_copy_paste_invariants():
    with criterion(6, "200 copy-paste composites: disjoint masks, two-valued provenance, drop rule"):
        rng = np.random.default_rng(6)
        cfg = AugmentConfig(copy_paste_max_instances=4, visibility_threshold=0.3)
        outcomes = set()
        for trial in range(200):
            h, w = int(rng.integers(6, 20)), int(rng.integers(6, 20))
            target = random_sample(rng, h, w, int(rng.integers(0, 5)), 1, disjoint=True)
            source = random_sample(rng, h, w, int(rng.integers(1, 6)), 2)
            out = copy_paste(target, source, cfg, random_stream(trial))

            masks = [i.mask for i in out.instances]
            for m1, m2 in itertools.combinations(masks, 2):
                assert not (m1 & m2).any(), f"trial {trial}: overlapping masks"

            from_target = (out.image == target.image).all(axis=2)
            from_source = (out.image == source.image).all(axis=2)
            assert (from_target | from_source).all(), f"trial {trial}: third pixel value"

            replay = random_stream(trial)
            limit = min(cfg.copy_paste_max_instances, len(source.instances))
            count = int(replay.integers(1, limit + 1))
            chosen = [source.instances[i] for i in replay.choice(len(source.instances), count, replace=False)]
            pasted = np.zeros((h, w), dtype=bool)
            for inst in chosen:
                pasted |= inst.mask
            assert (from_source[pasted]).all() and (from_target[~pasted]).all()

            # drop rule by explicit pixel counting
            img, kept = brute_copy_paste(target, source, chosen, cfg.visibility_threshold)
            for inst in target.instances:
                orig = sum(1 for v in inst.mask.ravel().tolist() if v)
                vis = sum(1 for v, p in zip(inst.mask.ravel().tolist(), pasted.ravel().tolist()) if v and not p)
                survived = any(o.id is not None and np.array_equal(o.mask, inst.mask & ~pasted) for o in out.instances)
                assert survived == (vis >= cfg.visibility_threshold * orig), f"trial {trial}"
                outcomes.add(survived)
            assert np.array_equal(out.image, img)
            assert [i.mask.tolist() for i in out.instances] == [k.tolist() for k in kept]
        assert outcomes == {True, False}, "drop rule not exercised both ways"


# -- 7 ------------------------------------------------------------------------

def test_07_geometric_pipeline_extents():
    with criterion(7, "1,000 geometric outputs are 1920x1440; pre-crop short/long side rules hold"):
        cfg = AugmentConfig()
        lo, hi = cfg.scale_short_range
        rng = np.random.default_rng(7)
        n_capped = 0
        for k in range(1000):
            # mostly ordinary aspect ratios, some extreme ones that hit the long-side cap
            if k % 5 == 0:
                h, w = int(rng.integers(4, 40)), int(rng.integers(150, 400))
            else:
                h, w = int(rng.integers(16, 300)), int(rng.integers(16, 300))
            if rng.random() < 0.5:
                h, w = w, h
            sample = random_sample(rng, h, w, int(rng.integers(0, 3)), k)
            plan = plan_geometry(h, w, cfg, random_stream(k))
            out = apply_geometry(sample, plan)

            assert out.image.shape == (1440, 1920, 3), out.image.shape
            for inst in out.instances:
                assert inst.mask.shape == (1440, 1920)
                x, y, bw, bh = inst.bbox
                assert x >= 0 and y >= 0 and x + bw <= 1920 and y + bh <= 1440
            rh, rw = plan.resized_hw
            short, long = min(rh, rw), max(rh, rw)
            assert long <= cfg.long_side_cap and short <= hi, (h, w, plan)
            capped = long == cfg.long_side_cap and short < lo
            capped = capped or max(h, w) / min(h, w) * lo > cfg.long_side_cap
            assert capped or lo <= short <= hi, (h, w, plan)
            n_capped += capped
        assert 0 < n_capped < 1000


# -- 8 ------------------------------------------------------------------------

def test_08_swa():
    with criterion(8, "SWA: identical inputs bit-equal, 1-ulp mean, byte-identical archive, order-free"):
        rng = np.random.default_rng(8)

        def ck():
            return {
                "backbone.w": rng.standard_normal((4, 3, 3)).astype(np.float32),
                "head.b": rng.standard_normal(7).astype(np.float32),
                "norm.running_mean": rng.standard_normal(5).astype(np.float32),
            }

        a = ck()
        for k in (1, 2, 5):
            avg = average_checkpoints([a] * k)
            assert all(avg[n].tobytes() == a[n].tobytes() for n in a)

        b = ck()
        avg = average_checkpoints([a, b])
        for n in a:
            exact = (a[n].astype(np.float64) + b[n].astype(np.float64)) / 2
            assert (np.abs(avg[n] - exact) <= np.spacing(np.abs(exact).astype(np.float32))).all()

        data = to_bytes(a)
        assert to_bytes(from_bytes(data)) == data

        cks = [ck() for _ in range(6)]
        ref = to_bytes(average_checkpoints(cks))
        for _ in range(5):
            perm = [cks[i] for i in rng.permutation(len(cks))]
            assert to_bytes(average_checkpoints(perm)) == ref


# -- 9 ------------------------------------------------------------------------

def test_09_tta():
    with criterion(9, "identity-view tta_merge == soft_nms on 200 inputs; noiseless 10-view map = 1.0 +- 1e-6"):
        rng = np.random.default_rng(9)
        identity = TtaTransform(1.0, False, (32, 32))
        for _ in range(200):
            dets = []
            for _ in range(int(rng.integers(0, 10))):
                x, y = (int(v) for v in rng.integers(0, 28, 2))
                bw, bh = (int(v) for v in rng.integers(1, 32 - max(x, y) + 1, 2))
                m = rect_mask(32, 32, x, y, bw, bh)
                dets.append(Detection(1, int(rng.integers(1, 3)), BBox(x, y, bw, bh), rle_encode(m), float(rng.random())))
            p = SoftNmsParams(sigma=float(rng.uniform(0.1, 1.0)), iou_kind=str(rng.choice(["box", "mask"])))
            assert tta_merge([(dets, identity)], p) == soft_nms(dets, p)

        gt = make_synthetic_dataset(n_images=10, height=128, width=128, seed=9)
        cfg = {
            "dataset": gt,
            "detector": {"oracle": {"score_mean": 1.0, "score_spread": 0.0}},
            "tta": [{"scale": s, "hflip": f} for s, f in FULL_TTA],
        }
        report, _ = run_pipeline(cfg)
        assert abs(report.map - 1.0) <= 1e-6, report.map


# -- 10 -----------------------------------------------------------------------

def test_10_determinism(tmp_path):
    with criterion(10, "two seeded pipeline runs give byte-identical results and report in < 60 s"):
        gt = make_synthetic_dataset(n_images=20, height=256, width=256, seed=10)
        cfg = {
            "dataset": gt,
            "detector": {"oracle": {"jitter_px": 3, "fp_rate": 1.0, "fn_rate": 0.1, "maskiou_noise": 0.1}},
            "tta": [{"scale": s, "hflip": f} for s, f in FULL_TTA],
            "seed": 1234,
        }
        start = time.perf_counter()
        outs = []
        for k in range(2):
            report, _ = run_pipeline(cfg, results_path=tmp_path / f"r{k}.json")
            outs.append(((tmp_path / f"r{k}.json").read_bytes(), report.to_json()))
        elapsed = time.perf_counter() - start
        assert outs[0][0] == outs[1][0]
        assert outs[0][1] == outs[1][1]
        assert json.loads(outs[0][0])
        assert elapsed < 60.0, f"{elapsed:.1f}s"


# -- 11 -----------------------------------------------------------------------

def test_11_jitter_monotonicity():
    with criterion(11, "oracle jitter 0/4/8 px on a fixed seed gives non-increasing map"):
        gt = make_synthetic_dataset(n_images=20, height=256, width=256, seed=11)
        maps = []
        for jitter in (0, 4, 8):
            cfg = {"dataset": gt, "detector": {"oracle": {"jitter_px": jitter}}, "seed": 11}
            maps.append(run_pipeline(cfg)[0].map)
        assert maps[0] >= maps[1] >= maps[2], maps


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
