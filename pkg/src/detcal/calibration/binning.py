from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_is_fitted

from ..metrics.confidence import BinningScheme
from .base import ConfidenceCalibrator, check_features, check_labels, register


@register("hist")
class HistogramBinning(ConfidenceCalibrator):
    """Histogram binning over confidence and, optionally, box features.

    Each grid cell predicts the fraction of matched training samples that fell
    into it. Empty cells fall back to the overall matched fraction.

    Parameters
    ----------
    bins : int or sequence of int, optional
        Bins per feature. Defaults to 20 for confidence-only input and 5 per
        dimension otherwise.
    smoothing : bool
        Add-one (Laplace) smoothing of the per-cell estimate.
    """

    def __init__(self, bins=None, smoothing=False):
        self.bins = bins
        self.smoothing = smoothing

    def fit(self, X, y):
        X = check_features(X)
        y = check_labels(y, len(X))
        if len(X) == 0:
            raise ValueError("no samples")
        self.scheme_ = BinningScheme.for_features(X.shape[1], self.bins)
        cells = self.scheme_.cell_index(X)
        counts = np.bincount(cells, minlength=self.scheme_.n_cells).astype(float)
        hits = np.bincount(cells, weights=y, minlength=self.scheme_.n_cells)
        self.fallback_ = float(y.mean())
        if self.smoothing:
            theta = (hits + 1.0) / (counts + 2.0)
        else:
            theta = np.divide(hits, counts, out=np.full_like(hits, self.fallback_), where=counts > 0)
        theta[counts == 0] = self.fallback_
        self.theta_ = theta
        self.counts_ = counts.astype(int)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "theta_")
        X = check_features(X, self.n_features_in_)
        return self.theta_[self.scheme_.cell_index(X)]

    def _state(self):
        return {"bins": list(self.scheme_.bins), "theta": self.theta_.tolist(),
                "counts": self.counts_.tolist(), "fallback": self.fallback_}

    def _load_state(self, state):
        self.scheme_ = BinningScheme(tuple(state["bins"]))
        self.theta_ = np.asarray(state["theta"], dtype=float)
        self.counts_ = np.asarray(state["counts"], dtype=int)
        self.fallback_ = float(state["fallback"])
        self.n_features_in_ = self.scheme_.n_dims
