"""Bayesian confidence calibration by stochastic variational inference.

The parameters of a scaling calibrator get a mean-field Gaussian posterior,
trained by maximizing the ELBO with reparameterized Monte Carlo gradients on
minibatches. Predictions sample parameter sets from the posterior; the mean
of the resulting calibrated confidences is the point estimate and the
narrowest interval holding a fraction ``tau`` of them expresses the
epistemic uncertainty.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.utils.validation import check_is_fitted

from ..metrics.confidence import BinningScheme
from .base import ConfidenceCalibrator, check_both_classes, check_features, check_labels, register
from .scaling import BetaCalibration, LogisticCalibration

BASE_METHODS = {
    "logistic": (LogisticCalibration, False, False),
    "logistic_mv_indep": (LogisticCalibration, False, True),
    "logistic_mv_dep": (LogisticCalibration, True, True),
    "beta": (BetaCalibration, False, False),
    "beta_mv_indep": (BetaCalibration, False, True),
}


@dataclass(frozen=True)
class PredictiveSample:
    samples: np.ndarray  # (n, T)
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def hpdi(samples, tau: float):
    """Narrowest window of ``ceil(tau * T)`` sorted samples, per row.

    Ties go to the window with the lowest start.
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    samples = np.asarray(samples, dtype=float)
    squeeze = samples.ndim == 1
    samples = np.sort(np.atleast_2d(samples), axis=1)
    T = samples.shape[1]
    m = min(T, max(1, math.ceil(tau * T - 1e-12)))
    widths = samples[:, m - 1:] - samples[:, :T - m + 1]
    start = np.argmin(widths, axis=1)
    rows = np.arange(len(samples))
    lower, upper = samples[rows, start], samples[rows, start + m - 1]
    if squeeze:
        return float(lower[0]), float(upper[0])
    return lower, upper


def binned_precision(confidence, y, bins: int = 20) -> np.ndarray:
    """Per-sample empirical precision of the sample's confidence bin."""
    scheme = BinningScheme((bins,))
    cells = scheme.cell_index(np.asarray(confidence, dtype=float).reshape(-1, 1))
    counts = np.bincount(cells, minlength=bins)
    hits = np.bincount(cells, weights=np.asarray(y, dtype=float), minlength=bins)
    return (hits / np.maximum(counts, 1))[cells]


def picp_from_intervals(truth, lower, upper) -> float:
    truth = np.asarray(truth)
    return float(np.mean((truth >= lower) & (truth <= upper)))


def mpiw_from_intervals(lower, upper) -> float:
    return float(np.mean(np.asarray(upper) - np.asarray(lower)))


@register("bayesian")
class BayesianCalibration(ConfidenceCalibrator):
    """Mean-field variational posterior over a scaling calibrator.

    Parameters
    ----------
    base_method : str
        One of ``logistic``, ``logistic_mv_indep``, ``logistic_mv_dep``,
        ``beta``, ``beta_mv_indep``.
    epochs : int
        Number of SVI steps.
    mc_samples : int
        Reparameterized draws per step.
    step_size : float
        Adam learning rate.
    batch_size : int
        Minibatch size; the likelihood term is rescaled to the full dataset.
    n_draws : int
        Posterior draws used by ``transform`` and ``predict``.
    init_std : float
        Initial posterior standard deviation around the MLE warm start.
    seed : int
        Seed for minibatching, reparameterization noise and prediction draws.
    """

    def __init__(self, base_method="logistic", epochs=1500, mc_samples=8, step_size=0.02,
                 batch_size=1024, n_draws=200, init_std=0.05, seed=0):
        self.base_method = base_method
        self.epochs = epochs
        self.mc_samples = mc_samples
        self.step_size = step_size
        self.batch_size = batch_size
        self.n_draws = n_draws
        self.init_std = init_std
        self.seed = seed

    def _make_base(self, n_features):
        if self.base_method not in BASE_METHODS:
            raise ValueError(f"unknown base method {self.base_method!r}")
        cls, dependent, multivariate = BASE_METHODS[self.base_method]
        if multivariate and n_features < 2:
            raise ValueError(f"{self.base_method} needs box features")
        if not multivariate and n_features != 1:
            raise ValueError(f"{self.base_method} takes the confidence only")
        base = cls(dependent=dependent)
        base.n_features_in_ = n_features
        return base

    def fit(self, X, y):
        X = check_features(X)
        y = check_labels(y, len(X))
        check_both_classes(y)
        n = len(X)
        rng = np.random.Generator(np.random.Philox(self.seed))
        base = self._make_base(X.shape[1]).fit(X, y)
        F = base._design(X)
        prior = base.prior_scales()
        mean = base.params_.copy()
        log_std = np.full_like(mean, np.log(self.init_std))
        omega = np.concatenate([mean, log_std])
        m_adam, v_adam = np.zeros_like(omega), np.zeros_like(omega)
        beta1, beta2 = 0.9, 0.999
        P = len(mean)
        batch = min(self.batch_size, n)
        scale = n / batch
        elbo = np.empty(self.epochs)
        for step in range(self.epochs):
            idx = rng.choice(n, size=batch, replace=False) if batch < n else slice(None)
            Fb, yb = F[idx], y[idx]
            mean, log_std = omega[:P], omega[P:]
            std = np.exp(log_std)
            eps = rng.standard_normal((self.mc_samples, P))
            g_mean = np.zeros(P)
            g_log_std = np.zeros(P)
            nll = 0.0
            for e in eps:
                loss, grad = base.objective(mean + std * e, Fb, yb)
                nll += scale * loss
                g_mean += scale * grad
                g_log_std += scale * grad * e * std
            nll /= self.mc_samples
            g_mean /= self.mc_samples
            g_log_std /= self.mc_samples
            kl = np.sum(np.log(prior) - log_std + (std ** 2 + mean ** 2) / (2 * prior ** 2) - 0.5)
            if not np.isfinite(nll + kl):
                raise FloatingPointError(f"non-finite ELBO at step {step}: nll={nll}, kl={kl}")
            elbo[step] = -(nll + kl)
            grad = np.concatenate([g_mean + mean / prior ** 2, g_log_std - 1.0 + std ** 2 / prior ** 2])
            m_adam = beta1 * m_adam + (1 - beta1) * grad
            v_adam = beta2 * v_adam + (1 - beta2) * grad ** 2
            lr = self.step_size / math.sqrt(1.0 + step / 100.0)
            m_hat = m_adam / (1 - beta1 ** (step + 1))
            v_hat = v_adam / (1 - beta2 ** (step + 1))
            omega = omega - lr * m_hat / (np.sqrt(v_hat) + 1e-8)
        self.base_ = base
        self.mle_params_ = base.params_.copy()
        self.mean_ = omega[:P].copy()
        self.log_std_ = omega[P:].copy()
        self.elbo_ = elbo
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def std_(self):
        return np.exp(self.log_std_)

    def draw_params(self, T, seed=None):
        check_is_fitted(self, "mean_")
        rng = np.random.Generator(np.random.Philox(self.seed if seed is None else seed))
        return self.mean_ + self.std_ * rng.standard_normal((T, len(self.mean_)))

    def predict(self, X, T=None, tau: float = 0.95, seed=None) -> PredictiveSample:
        """Posterior-predictive confidences for every row of ``X``."""
        check_is_fitted(self, "mean_")
        X = check_features(X, self.n_features_in_)
        T = self.n_draws if T is None else T
        draws = self.draw_params(T, seed)
        samples = np.stack([self.base_.transform_with(theta, X) for theta in draws], axis=1)
        lower, upper = hpdi(samples, tau)
        return PredictiveSample(samples, samples.mean(axis=1), lower, upper)

    def transform(self, X):
        return self.predict(X).mean

    def picp(self, X, y=None, tau=0.95, bins_for_truth=20, T=None, seed=None, truth=None) -> float:
        """Fraction of samples whose reference precision lies in the HPDI.

        The reference is ``truth`` when given (for instance a known calibration
        map), otherwise the binned empirical precision of ``y``.
        """
        X = check_features(X, self.n_features_in_)
        pred = self.predict(X, T, tau, seed)
        if truth is None:
            if y is None:
                raise ValueError("either y or truth is required")
            truth = binned_precision(X[:, 0], y, bins_for_truth)
        return picp_from_intervals(truth, pred.lower, pred.upper)

    def mpiw(self, X, tau=0.95, T=None, seed=None) -> float:
        pred = self.predict(X, T, tau, seed)
        return mpiw_from_intervals(pred.lower, pred.upper)

    def _state(self):
        return {"n_features": self.n_features_in_, "mean": self.mean_.tolist(),
                "log_std": self.log_std_.tolist()}

    def _load_state(self, state):
        self.n_features_in_ = int(state["n_features"])
        self.base_ = self._make_base(self.n_features_in_)
        self.mean_ = np.asarray(state["mean"], dtype=float)
        self.log_std_ = np.asarray(state["log_std"], dtype=float)
        self.base_.params_ = self.mean_.copy()
