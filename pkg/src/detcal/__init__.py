"""Calibration of probabilistic object detections and calibrated tracking-by-detection."""
from . import calibration, metrics, synthetic, tracking
from .core import (BoundingBox, CalibrationSample, Detection, GroundTruthObject, MatchedDataset,
                   build_dataset, extract_features, iou, iou_matrix, match_frame)
from .mot import MotReport, evaluate

__version__ = "0.1.0"

__all__ = ["calibration", "metrics", "synthetic", "tracking", "BoundingBox", "CalibrationSample",
           "Detection", "GroundTruthObject", "MatchedDataset", "build_dataset", "extract_features", "iou",
           "iou_matrix", "match_frame", "MotReport", "evaluate"]
