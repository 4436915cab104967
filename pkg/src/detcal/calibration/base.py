"""Estimator base classes, input validation and the model (de)serialization registry."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

CONF_EPS = 1e-6

_REGISTRY: dict[str, type] = {}


def register(method: str):
    """Class decorator tying a calibrator to its serialization tag."""
    def wrap(cls):
        if method in _REGISTRY:
            raise ValueError(f"duplicate method tag {method!r}")
        cls.method = method
        _REGISTRY[method] = cls
        return cls
    return wrap


def model_from_dict(payload: dict):
    method = payload.get("method")
    if method not in _REGISTRY:
        raise ValueError(f"unknown calibration method tag {method!r}")
    return _REGISTRY[method].from_dict(payload)


def check_features(X, n_features=None) -> np.ndarray:
    """Feature matrix with the confidence in column 0 and box features after it."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValueError("X must be a 1-D confidence array or an (n, K) feature matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    if np.any((X[:, 0] < 0) | (X[:, 0] > 1)):
        raise ValueError("confidences must lie in [0, 1]")
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got {X.shape[1]}")
    return X


def check_labels(y, n_samples) -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) != n_samples:
        raise ValueError("X and y differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("y must hold binary match flags")
    return y


def check_both_classes(y):
    if y.min() == y.max():
        raise ValueError("degenerate labels: both matched and unmatched samples are required")


def split_gaussian(X, n_dims=None):
    """Split an ``(n, 2L)`` input into means and variances."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] % 2:
        raise ValueError("regression input must be an (n, 2L) array of means followed by variances")
    L = X.shape[1] // 2
    if n_dims is not None and L != n_dims:
        raise ValueError(f"expected {n_dims} dimensions, got {L}")
    mean, var = X[:, :L], X[:, L:]
    if not (np.all(np.isfinite(X)) and np.all(var > 0)):
        raise ValueError("means must be finite and variances positive")
    return mean, var


def stack_gaussian(mean, var) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    if mean.ndim == 1:
        mean, var = mean[:, None], var[:, None]
    return np.hstack([mean, var])


def check_targets(y, n_samples, n_dims) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape != (n_samples, n_dims):
        raise ValueError(f"targets must have shape ({n_samples}, {n_dims})")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    return y


def clip_probability(p, eps=CONF_EPS):
    return np.clip(p, eps, 1.0 - eps)


class SerializableMixin:
    """JSON round trip through ``{"method", "params", "state"}`` payloads."""

    method = "abstract"

    def to_dict(self) -> dict:
        check_is_fitted(self)
        return {"method": self.method, "params": self.get_params(), "state": self._state()}

    @classmethod
    def from_dict(cls, payload: dict):
        if payload.get("method") != cls.method:
            raise ValueError(f"payload tag {payload.get('method')!r} does not match {cls.method!r}")
        model = cls(**payload["params"])
        model._load_state(payload["state"])
        return model

    def _state(self) -> dict:
        raise NotImplementedError

    def _load_state(self, state: dict):
        raise NotImplementedError


class ConfidenceCalibrator(SerializableMixin, TransformerMixin, BaseEstimator):
    """Maps detector confidences (plus optional box features) to calibrated ones.

    ``transform`` returns a 1-D array of calibrated confidences;
    ``predict_proba`` returns the usual two-column layout.
    """

    def predict_proba(self, X):
        q = self.transform(X)
        return np.column_stack([1.0 - q, q])
