"""segkit: deterministic building blocks of an instance-segmentation pipeline."""

__version__ = "0.1.0"

from .dataset_io import Annotation, Dataset, Detection, load_coco, load_results, write_results
from .evaluator import EvalParams, EvalReport, MaskAPEvaluator, evaluate
from .mask_core import BBox, RleMask, box_iou, mask_iou, rle_decode, rle_encode
from .postprocess import ScoreCalibrator, SoftNMS, SoftNmsParams, TtaTransform, soft_nms, tta_merge

__all__ = [
    "Annotation",
    "BBox",
    "Dataset",
    "Detection",
    "EvalParams",
    "EvalReport",
    "MaskAPEvaluator",
    "RleMask",
    "ScoreCalibrator",
    "SoftNMS",
    "SoftNmsParams",
    "TtaTransform",
    "box_iou",
    "evaluate",
    "load_coco",
    "load_results",
    "mask_iou",
    "rle_decode",
    "rle_encode",
    "soft_nms",
    "tta_merge",
    "write_results",
]
