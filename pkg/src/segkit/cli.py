"""``segkit`` command line.

Exit codes: 0 success, 1 validation or data errors, 2 usage errors.
Diagnostics go to stderr; machine-readable output goes to stdout or to the
paths named by ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .errors import ConfigError, IoError, ParseError, SegkitError

log = logging.getLogger("segkit")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def _read_json(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None


def cmd_augment(args):
    from .augment import AugmentConfig, Sample, make_augment_pipeline
    from .dataset_io import Dataset, ImageInfo, load_coco, write_coco
    from .imaging import read_png, write_png

    cfg = AugmentConfig.from_json(args.config) if args.config else AugmentConfig()
    ds = load_coco(args.dataset)
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out_dir}: {exc}") from exc

    samples = [Sample.from_dataset(ds, im.id, read_png(ds.image_path(im.id))) for im in ds.images]
    log.info("augmenting %d images with seed %d", len(samples), args.seed)
    augmented = make_augment_pipeline(cfg, random_state=args.seed).fit_transform(samples)

    next_id = max((a.id for a in ds.annotations), default=0) + 1
    images, annotations = [], []
    for info, sample in zip(ds.images, augmented):
        name = Path(info.file_name).stem + ".png"
        write_png(sample.image, out_dir / name)
        h, w = sample.image.shape[:2]
        images.append(ImageInfo(info.id, name, h, w))
        anns = sample.to_annotations(next_id)
        next_id = max([next_id] + [a.id + 1 for a in anns])
        annotations.extend(anns)
    write_coco(Dataset(images, annotations, ds.categories), out_dir / "annotations.json")
    return 0


def cmd_postprocess(args):
    from .dataset_io import load_results, write_results
    from .postprocess import ScoreCalibrator, SoftNMS, SoftNmsParams

    params = SoftNmsParams()
    if args.config:
        doc = _read_json(args.config)
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        params = SoftNmsParams.from_dict(doc.get("postprocess", {}))
    dets = load_results(args.inp)
    nms = SoftNMS(**asdict(params))
    write_results(nms.fit_transform(ScoreCalibrator().fit_transform(dets)), args.out)
    return 0


def cmd_swa(args):
    from .swa import average_checkpoints, read_archive, write_archive

    cks = [read_archive(p) for p in args.inputs]
    write_archive(average_checkpoints(cks), args.out)
    log.info("averaged %d checkpoints into %s", len(cks), args.out)
    return 0


def cmd_eval(args):
    from .dataset_io import load_coco, load_results
    from .evaluator import EvalParams, evaluate

    report = evaluate(load_results(args.results), load_coco(args.gt), EvalParams(iou_kind=args.iou_kind))
    print(report.to_json())
    return 0


def cmd_pipeline(args):
    from .harness import PipelineConfig, run_pipeline

    path = Path(args.config)
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise ConfigError("pipeline config must be a JSON object")
    if args.seed is not None:
        doc["seed"] = args.seed
        oracle = doc.get("detector", {}).get("oracle") if isinstance(doc.get("detector"), dict) else None
        if isinstance(oracle, dict):
            oracle["seed"] = args.seed
    config = PipelineConfig.from_dict(doc, base_dir=path.parent)
    report, _ = run_pipeline(config, results_path=args.out)
    print(report.to_json())
    return 0


def cmd_selftest(args):
    from .selftest import run_all

    ok = run_all(seed=args.seed or 0, out=sys.stdout)
    return 0 if ok else 1


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_u64, default=None, help="run seed (u64)")
    common.add_argument("--log-level", choices=sorted(LOG_LEVELS), default=None)

    parser = argparse.ArgumentParser(prog="segkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"segkit {__version__}")
    parser.add_argument("--seed", dest="global_seed", type=_u64, default=None, help="run seed (u64)")
    parser.add_argument("--log-level", dest="global_log_level", choices=sorted(LOG_LEVELS), default="warn")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("augment", parents=[common], help="augment a COCO dataset")
    p.add_argument("--config", help="AugmentConfig JSON")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("postprocess", parents=[common], help="calibrate scores and run soft-NMS")
    p.add_argument("--in", dest="inp", required=True, help="COCO results JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON with a 'postprocess' section")
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("swa", parents=[common], help="average SWA1 checkpoint archives")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_swa)

    p = sub.add_parser("eval", parents=[common], help="mask mAP of a results file")
    p.add_argument("--gt", required=True)
    p.add_argument("--results", required=True)
    p.add_argument("--iou-kind", choices=("mask", "box"), default="mask")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", parents=[common], help="run the end-to-end pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="write merged results JSON here")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("selftest", parents=[common], help="run the built-in invariant checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def _u64(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in u64: {text!r}")
    return value


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("segkit: error: a command is required", file=sys.stderr)
        return 2
    if args.seed is None:
        args.seed = args.global_seed
    if args.command == "augment" and args.seed is None:
        args.seed = 0
    level = args.log_level or args.global_log_level
    logging.basicConfig(stream=sys.stderr, level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SegkitError as exc:
        print(f"segkit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"segkit: IoError: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
