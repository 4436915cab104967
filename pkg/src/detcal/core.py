"""Domain types for detections and ground truth, box geometry and IoU matching."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

FEATURES = ("confidence", "cx", "cy", "w", "h")
BOX_FIELDS = ("cx", "cy", "w", "h")


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in center/size encoding."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box width and height must be positive, got w={self.w}, h={self.h}")
        if not np.all(np.isfinite([self.cx, self.cy, self.w, self.h])):
            raise ValueError("box coordinates must be finite")

    @classmethod
    def from_corners(cls, x1, y1, x2, y2) -> "BoundingBox":
        return cls((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)

    @property
    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0,
                self.cx + self.w / 2.0, self.cy + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=float)

    def to_dict(self) -> dict:
        return {"cx": self.cx, "cy": self.cy, "w": self.w, "h": self.h}


def _check_variances(variances):
    if variances is None:
        return None
    variances = tuple(float(v) for v in variances)
    if len(variances) != 4:
        raise ValueError("box variances need exactly 4 entries (cx, cy, w, h)")
    if not all(v > 0 and np.isfinite(v) for v in variances):
        raise ValueError("box variances must be positive and finite")
    return variances


@dataclass(frozen=True)
class Detection:
    label: int
    confidence: float
    box: BoundingBox
    box_variances: Optional[tuple[float, float, float, float]] = None
    frame_id: int = 0
    detection_id: int = 0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")
        object.__setattr__(self, "box_variances", _check_variances(self.box_variances))


@dataclass(frozen=True)
class GroundTruthObject:
    label: int
    box: BoundingBox
    frame_id: int = 0
    object_id: int = 0


@dataclass(frozen=True)
class CalibrationSample:
    """A detection together with its matching outcome against the ground truth."""

    confidence: float
    label: int
    box: BoundingBox
    matched: int
    box_variances: Optional[tuple[float, float, float, float]] = None
    gt_box: Optional[BoundingBox] = None

    def __post_init__(self):
        if self.matched not in (0, 1):
            raise ValueError("matched flag must be 0 or 1")
        if (self.gt_box is not None) != bool(self.matched):
            raise ValueError("gt_box must be present if and only if the sample is matched")
        object.__setattr__(self, "box_variances", _check_variances(self.box_variances))


@dataclass
class MatchedDataset:
    """Ordered calibration samples plus the conventions they were built under.

    ``image_size`` is used to normalize box coordinates into [0, 1] whenever
    features are extracted; relative-coordinate data uses ``(1.0, 1.0)``.
    """

    samples: list[CalibrationSample]
    iou_threshold: float = 0.5
    image_size: tuple[float, float] = (1.0, 1.0)
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValueError("iou_threshold must lie in (0, 1)")

    def __len__(self):
        return len(self.samples)

    @property
    def confidences(self) -> np.ndarray:
        return np.array([s.confidence for s in self.samples], dtype=float)

    @property
    def matched(self) -> np.ndarray:
        return np.array([s.matched for s in self.samples], dtype=int)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=int)

    def boxes(self) -> np.ndarray:
        return np.array([s.box.as_array() for s in self.samples], dtype=float).reshape(-1, 4)

    def features(self, feature_set: Sequence[str] = ("confidence",)) -> np.ndarray:
        """Feature matrix with box quantities normalized by the image size."""
        return extract_features(self.confidences, self.boxes(), feature_set, self.image_size)

    def regression_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(mean, variance, target)`` arrays over matched samples with variances.

        Unmatched detections carry no ground truth and are left out.
        """
        rows = [s for s in self.samples if s.matched and s.box_variances is not None]
        if not rows:
            raise ValueError("no matched samples with box variances")
        mean = np.array([s.box.as_array() for s in rows])
        var = np.array([s.box_variances for s in rows], dtype=float)
        target = np.array([s.gt_box.as_array() for s in rows])
        return mean, var, target

    def subset(self, index) -> "MatchedDataset":
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return MatchedDataset([self.samples[i] for i in index], self.iou_threshold, self.image_size)


def extract_features(confidence, boxes, feature_set, image_size=(1.0, 1.0)) -> np.ndarray:
    feature_set = tuple(feature_set)
    unknown = set(feature_set) - set(FEATURES)
    if unknown:
        raise ValueError(f"unknown features {sorted(unknown)}; choose from {FEATURES}")
    confidence = np.asarray(confidence, dtype=float).reshape(-1)
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    width, height = image_size
    scale = np.array([width, height, width, height], dtype=float)
    normalized = boxes / scale
    columns = []
    for name in feature_set:
        if name == "confidence":
            columns.append(confidence)
        else:
            columns.append(normalized[:, BOX_FIELDS.index(name)])
    return np.column_stack(columns) if columns else np.empty((len(confidence), 0))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ax1, ay1, ax2, ay2 = a.corners
    bx1, by1, bx2, by2 = b.corners
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return float(min(1.0, max(0.0, inter / union)))


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two stacks of (cx, cy, w, h) boxes."""
    a = np.asarray(boxes_a, dtype=float).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=float).reshape(-1, 4)
    a1, a2 = a[:, :2] - a[:, 2:] / 2, a[:, :2] + a[:, 2:] / 2
    b1, b2 = b[:, :2] - b[:, 2:] / 2, b[:, :2] + b[:, 2:] / 2
    lo = np.maximum(a1[:, None, :], b1[None, :, :])
    hi = np.minimum(a2[:, None, :], b2[None, :, :])
    wh = np.clip(hi - lo, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    return np.clip(inter / union, 0.0, 1.0)


def match_frame(detections: Sequence[Detection], ground_truths: Sequence[GroundTruthObject],
                iou_threshold: float = 0.5) -> list[Optional[int]]:
    """Greedy class-aware matching of one frame.

    Detections are visited by descending confidence (ties: ascending
    ``detection_id``); each claims the unclaimed same-label ground truth with
    the highest IoU at or above the threshold (ties: ascending ``object_id``).

    Returns
    -------
    list
        For every detection, in input order, the index into ``ground_truths``
        of its match, or ``None``.
    """
    assignment: list[Optional[int]] = [None] * len(detections)
    if not detections or not ground_truths:
        return assignment
    overlaps = iou_matrix([d.box.as_array() for d in detections],
                          [g.box.as_array() for g in ground_truths])
    gt_order = sorted(range(len(ground_truths)), key=lambda j: ground_truths[j].object_id)
    order = sorted(range(len(detections)),
                   key=lambda i: (-detections[i].confidence, detections[i].detection_id))
    claimed = set()
    for i in order:
        best, best_iou = None, -1.0
        for j in gt_order:
            if j in claimed or ground_truths[j].label != detections[i].label:
                continue
            value = overlaps[i, j]
            if value >= iou_threshold and value > best_iou:
                best, best_iou = j, value
        if best is not None:
            claimed.add(best)
            assignment[i] = best
    return assignment


RELATIVE_MARGIN = 2.0


def _looks_relative(box: BoundingBox) -> bool:
    # relative boxes may poke slightly out of the unit square near the border
    return max(abs(box.cx), abs(box.cy), box.w, box.h) <= RELATIVE_MARGIN


def build_dataset(frames: Iterable[tuple[Sequence[Detection], Sequence[GroundTruthObject]]],
                  iou_threshold: float = 0.5, min_confidence: float = 0.3,
                  image_size: tuple[float, float] = (1.0, 1.0)) -> MatchedDataset:
    """Match every frame and concatenate the results into one dataset.

    Detections with confidence below ``min_confidence`` are dropped after
    matching, so they cannot steal ground truths from the retained ones.
    """
    samples = []
    relative_seen = pixel_seen = False
    for detections, ground_truths in frames:
        for item in list(detections) + list(ground_truths):
            if _looks_relative(item.box):
                relative_seen = True
            else:
                pixel_seen = True
        assignment = match_frame(detections, ground_truths, iou_threshold)
        for det, gt_index in zip(detections, assignment):
            if det.confidence < min_confidence:
                continue
            gt_box = ground_truths[gt_index].box if gt_index is not None else None
            samples.append(CalibrationSample(det.confidence, det.label, det.box,
                                             int(gt_index is not None), det.box_variances, gt_box))
    if relative_seen and pixel_seen:
        raise ValueError("mixed coordinate conventions: found both relative and pixel boxes")
    if pixel_seen and tuple(image_size) == (1.0, 1.0):
        raise ValueError("pixel coordinates require an explicit image_size")
    return MatchedDataset(samples, iou_threshold, tuple(float(v) for v in image_size))
