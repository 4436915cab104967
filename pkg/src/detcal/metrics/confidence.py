"""Calibration and detection-performance metrics for semantic confidences.

All functions take a feature matrix ``X`` whose first column is the
confidence being evaluated (already calibrated or not) and optional further
columns of box features normalized to [0, 1], together with binary match
flags ``y``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

NLL_EPS = 1e-7


@dataclass(frozen=True)
class BinningScheme:
    """Equal-width grid over a bounded feature space.

    Bins are half-open ``[lo, hi)`` except the last one per dimension, which is
    closed, so that a confidence of exactly 1 is not lost.
    """

    bins: tuple[int, ...] = (20,)
    ranges: Optional[tuple[tuple[float, float], ...]] = None
    min_samples_per_bin: int = 0

    def __post_init__(self):
        bins = tuple(int(b) for b in np.atleast_1d(self.bins))
        if any(b < 1 for b in bins):
            raise ValueError("every dimension needs at least one bin")
        object.__setattr__(self, "bins", bins)
        if self.ranges is None:
            object.__setattr__(self, "ranges", tuple((0.0, 1.0) for _ in bins))
        if len(self.ranges) != len(bins):
            raise ValueError("ranges and bins must have the same length")
        for lo, hi in self.ranges:
            if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
                raise ValueError("bin ranges must be finite with hi > lo")
        if self.min_samples_per_bin < 0:
            raise ValueError("min_samples_per_bin must be non-negative")

    @classmethod
    def for_features(cls, n_features: int, bins=None, min_samples_per_bin: int = 0):
        """20 bins for a single feature, 5 per dimension otherwise, unless given."""
        if bins is None:
            bins = 20 if n_features == 1 else 5
        bins = np.atleast_1d(bins)
        if len(bins) == 1:
            bins = np.repeat(bins, n_features)
        return cls(tuple(int(b) for b in bins), None, min_samples_per_bin)

    @property
    def n_dims(self) -> int:
        return len(self.bins)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.bins))

    def digitize(self, X) -> np.ndarray:
        """Per-dimension bin index, clamped into the grid. Shape ``(n, n_dims)``."""
        X = np.asarray(X, dtype=float).reshape(len(X), -1)
        if X.shape[1] != self.n_dims:
            raise ValueError(f"expected {self.n_dims} features, got {X.shape[1]}")
        index = np.empty(X.shape, dtype=int)
        for k, (n_bins, (lo, hi)) in enumerate(zip(self.bins, self.ranges)):
            scaled = (X[:, k] - lo) / (hi - lo) * n_bins
            index[:, k] = np.clip(np.floor(scaled), 0, n_bins - 1).astype(int)
        return index

    def cell_index(self, X) -> np.ndarray:
        """Flat (row-major) cell index per sample."""
        return np.ravel_multi_index(self.digitize(X).T, self.bins) if len(X) else np.zeros(0, int)


@dataclass(frozen=True)
class ReliabilityBin:
    index: tuple[int, ...]
    count: int
    mean_confidence: float
    precision: float
    feature_means: tuple[float, ...]


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(X) == 0:
        raise ValueError("no samples")
    if len(X) != len(y):
        raise ValueError("X and y differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("y must hold binary match flags")
    return X, y


def reliability(X, y, scheme: Optional[BinningScheme] = None) -> list[ReliabilityBin]:
    """One record per populated grid cell (cells under the sample filter included)."""
    X, y = _check_xy(X, y)
    scheme = scheme or BinningScheme.for_features(X.shape[1])
    cells = scheme.cell_index(X)
    counts = np.bincount(cells, minlength=scheme.n_cells)
    conf_sum = np.bincount(cells, weights=X[:, 0], minlength=scheme.n_cells)
    hit_sum = np.bincount(cells, weights=y, minlength=scheme.n_cells)
    feat_sum = np.stack([np.bincount(cells, weights=X[:, k], minlength=scheme.n_cells)
                         for k in range(X.shape[1])], axis=1)
    records = []
    for cell in np.flatnonzero(counts):
        n = counts[cell]
        records.append(ReliabilityBin(
            index=tuple(int(i) for i in np.unravel_index(cell, scheme.bins)),
            count=int(n),
            mean_confidence=float(conf_sum[cell] / n),
            precision=float(hit_sum[cell] / n),
            feature_means=tuple(float(v) for v in feat_sum[cell] / n),
        ))
    return records


def dece_from_reliability(records: Sequence[ReliabilityBin], min_samples_per_bin: int = 0) -> float:
    kept = [r for r in records if r.count >= min_samples_per_bin]
    total = sum(r.count for r in kept)
    if total == 0:
        raise ValueError("insufficient density: every bin was filtered")
    return float(sum(r.count * abs(r.precision - r.mean_confidence) for r in kept) / total)


def dece(X, y, scheme: Optional[BinningScheme] = None) -> float:
    """Detection ECE over a joint grid of confidence and box features.

    Cells with fewer than ``scheme.min_samples_per_bin`` samples are dropped
    and the weights are renormalized over the remaining mass.
    """
    X, y = _check_xy(X, y)
    scheme = scheme or BinningScheme.for_features(X.shape[1])
    return dece_from_reliability(reliability(X, y, scheme), scheme.min_samples_per_bin)


def ece(confidence, y, bins: int = 20) -> float:
    confidence = np.asarray(confidence, dtype=float).reshape(-1, 1)
    return dece(confidence, y, BinningScheme((bins,)))


def mce(confidence, y, bins: int = 20) -> float:
    confidence = np.asarray(confidence, dtype=float).reshape(-1, 1)
    records = reliability(confidence, y, BinningScheme((bins,)))
    return float(max(abs(r.precision - r.mean_confidence) for r in records))


def brier(confidence, y) -> float:
    confidence, y = _check_xy(confidence, y)
    return float(np.mean((confidence[:, 0] - y) ** 2))


def nll_bernoulli(confidence, y, eps: float = NLL_EPS) -> float:
    confidence, y = _check_xy(confidence, y)
    p = np.clip(confidence[:, 0], eps, 1.0 - eps)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def precision_recall_curve(confidence, y) -> tuple[np.ndarray, np.ndarray]:
    """Precision and recall at every distinct confidence threshold, descending."""
    confidence, y = _check_xy(confidence, y)
    confidence = confidence[:, 0]
    n_pos = y.sum()
    if n_pos == 0:
        raise ValueError("precision-recall needs at least one matched sample")
    order = np.argsort(-confidence, kind="stable")
    conf_sorted, y_sorted = confidence[order], y[order]
    tp = np.cumsum(y_sorted)
    seen = np.arange(1, len(y_sorted) + 1)
    # last position of each group of tied confidences
    last = np.r_[np.flatnonzero(np.diff(conf_sorted) != 0), len(conf_sorted) - 1]
    return tp[last] / seen[last], tp[last] / n_pos


def auprc(confidence, y) -> float:
    """Trapezoidal area under the precision-recall curve.

    The curve starts at recall 0 with the precision of the highest threshold.
    """
    precision, recall = precision_recall_curve(confidence, y)
    recall = np.r_[0.0, recall]
    precision = np.r_[precision[0], precision]
    return float(np.sum(np.diff(recall) * (precision[1:] + precision[:-1]) / 2.0))


RELIABILITY_HEADER = ["bin_index", "count", "mean_conf", "precision",
                      "mean_cx", "mean_cy", "mean_w", "mean_h"]


def write_reliability_csv(records: Sequence[ReliabilityBin], path, feature_set: Sequence[str]):
    """Export reliability records; box-feature columns absent from ``feature_set`` stay empty."""
    feature_set = list(feature_set)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(RELIABILITY_HEADER)
        for r in records:
            means = dict(zip(feature_set, r.feature_means))
            writer.writerow([":".join(map(str, r.index)), r.count, repr(r.mean_confidence),
                             repr(r.precision)] + [repr(means[k]) if k in means else ""
                                                   for k in ("cx", "cy", "w", "h")])
