"""Logistic and beta calibration: univariate, multivariate independent and dependent.

Every model is a log-likelihood-ratio ``lr(X; params)`` in an unconstrained
parameter vector; the calibrated confidence is ``sigmoid(lr)``. Confidence
enters logistic models as a logit and beta models directly; box features
enter raw in [0, 1].
"""
from __future__ import annotations

import numpy as np
from scipy import optimize
from scipy.special import expit
from sklearn.utils.validation import check_is_fitted

from .base import (CONF_EPS, ConfidenceCalibrator, check_both_classes, check_features, check_labels,
                   clip_probability, register)

OUT_EPS = 1e-12


def bernoulli_nll_and_grad(lr, y):
    """Summed Bernoulli NLL of ``sigmoid(lr)`` and its derivative w.r.t. ``lr``."""
    loss = np.sum(np.logaddexp(0.0, lr) - y * lr)
    return loss, expit(lr) - y


class _ScalingCalibrator(ConfidenceCalibrator):
    """Shared fitting loop: L-BFGS on the summed NLL with analytic gradients."""

    max_iter = 2000
    ftol = 1e-10

    def _n_params(self, n_features):
        raise NotImplementedError

    def _initial_params(self, F, y):
        raise NotImplementedError

    def _design(self, X):
        raise NotImplementedError

    def _lr(self, params, F, jac=False):
        raise NotImplementedError

    def prior_scales(self) -> np.ndarray:
        """Prior standard deviation per unconstrained parameter (used by Bayesian variants)."""
        scales = np.ones(self._n_params(self.n_features_in_))
        scales[-1] = 10.0
        return scales

    def objective(self, params, F, y):
        lr, jac = self._lr(params, F, jac=True)
        loss, dlr = bernoulli_nll_and_grad(lr, y)
        return loss, jac.T @ dlr

    def fit(self, X, y):
        X = check_features(X)
        y = check_labels(y, len(X))
        check_both_classes(y)
        self.n_features_in_ = X.shape[1]
        self._validate_dims()
        F = self._design(X)
        start = self._initial_params(F, y)
        self.initial_loss_ = float(self.objective(start, F, y)[0])
        result = optimize.minimize(self.objective, start, args=(F, y), jac=True, method="L-BFGS-B",
                                   options={"maxiter": self.max_iter, "ftol": self.ftol, "gtol": 1e-10})
        params = result.x
        final_loss = float(self.objective(params, F, y)[0])
        if not final_loss <= self.initial_loss_:
            params, final_loss = start, self.initial_loss_
        self.params_ = params
        self.loss_ = final_loss
        self.n_iter_ = int(result.nit)
        return self

    def _validate_dims(self):
        pass

    def decision_function(self, X):
        """Calibrated log-likelihood ratio."""
        check_is_fitted(self, "params_")
        X = check_features(X, self.n_features_in_)
        return self._lr(self.params_, self._design(X))

    def transform_with(self, params, X):
        return np.clip(expit(self._lr(params, self._design(check_features(X)))), OUT_EPS, 1 - OUT_EPS)

    def transform(self, X):
        return np.clip(expit(self.decision_function(X)), OUT_EPS, 1.0 - OUT_EPS)

    def _state(self):
        return {"n_features": self.n_features_in_, "params": self.params_.tolist()}

    def _load_state(self, state):
        self.n_features_in_ = int(state["n_features"])
        self.params_ = np.asarray(state["params"], dtype=float)


def _logit(p):
    p = clip_probability(p, CONF_EPS)
    return np.log(p) - np.log1p(-p)


def _tril_size(k):
    return k * (k + 1) // 2


@register("logistic")
class LogisticCalibration(_ScalingCalibrator):
    """Logistic (Platt) calibration.

    With a single feature the map is ``sigmoid(w * logit(p) + delta)`` with
    ``w > 0``. With box features it is ``sigmoid(s @ w + delta)`` under
    conditional independence, or, with ``dependent=True``, the log ratio of two
    full-covariance Gaussians whose precision factors are optimized directly.
    """

    def __init__(self, dependent=False):
        self.dependent = dependent

    def _validate_dims(self):
        if self.dependent and self.n_features_in_ < 2:
            raise ValueError("dependent calibration needs at least 2 features")

    def _n_params(self, k):
        if self.dependent:
            return 2 * k + 2 * _tril_size(k) + 1
        return k + 1

    def _design(self, X):
        F = X.copy()
        F[:, 0] = _logit(X[:, 0])
        return F

    def _unpack_dependent(self, params, k):
        tri = np.tril_indices(k)
        t = _tril_size(k)
        mu_pos, mu_neg = params[:k], params[k:2 * k]
        prec_pos = np.zeros((k, k))
        prec_neg = np.zeros((k, k))
        prec_pos[tri] = params[2 * k:2 * k + t]
        prec_neg[tri] = params[2 * k + t:2 * k + 2 * t]
        return mu_pos, mu_neg, prec_pos, prec_neg, params[-1]

    def _initial_params(self, F, y):
        k = F.shape[1]
        if not self.dependent:
            # zero means identity: log w = 0 (univariate) or w = e_1 (offset in _lr)
            return np.zeros(k + 1)
        parts = []
        covs = []
        for cls in (1, 0):
            rows = F[y == cls]
            mean = rows.mean(axis=0)
            cov = np.cov(rows, rowvar=False) + 1e-3 * np.eye(k) if len(rows) > 1 else np.eye(k)
            parts.append(mean)
            covs.append(cov)
        tri = np.tril_indices(k)
        factors = [np.linalg.cholesky(np.linalg.inv(c))[tri] for c in covs]
        prior = np.clip(y.mean(), 1e-3, 1 - 1e-3)
        delta = 0.5 * (np.linalg.slogdet(covs[1])[1] - np.linalg.slogdet(covs[0])[1])
        delta += np.log(prior / (1 - prior))
        return np.concatenate([parts[0], parts[1], factors[0], factors[1], [delta]])

    def _lr(self, params, F, jac=False):
        n, k = F.shape
        if not self.dependent:
            if k == 1:
                w = np.exp(params[0])
                lr = w * F[:, 0] + params[1]
                return (lr, np.column_stack([w * F[:, 0], np.ones(n)])) if jac else lr
            w = params[:k].copy()
            w[0] += 1.0  # identity start at params == 0
            lr = F @ w + params[k]
            return (lr, np.column_stack([F, np.ones(n)])) if jac else lr
        mu_pos, mu_neg, prec_pos, prec_neg, delta = self._unpack_dependent(params, k)
        d_pos, d_neg = F - mu_pos, F - mu_neg
        white_pos, white_neg = d_pos @ prec_pos, d_neg @ prec_neg
        lr = 0.5 * (np.sum(white_neg ** 2, axis=1) - np.sum(white_pos ** 2, axis=1)) + delta
        if not jac:
            return lr
        tri = np.tril_indices(k)
        g_mu_pos = white_pos @ prec_pos.T
        g_mu_neg = -(white_neg @ prec_neg.T)
        g_prec_pos = -(d_pos[:, :, None] * white_pos[:, None, :])[:, tri[0], tri[1]]
        g_prec_neg = (d_neg[:, :, None] * white_neg[:, None, :])[:, tri[0], tri[1]]
        J = np.concatenate([g_mu_pos, g_mu_neg, g_prec_pos, g_prec_neg, np.ones((n, 1))], axis=1)
        return lr, J

    def coefficients(self):
        """Readable parameters: ``(w, delta)`` for the linear forms."""
        check_is_fitted(self, "params_")
        if self.dependent:
            mu_pos, mu_neg, p_pos, p_neg, delta = self._unpack_dependent(self.params_, self.n_features_in_)
            return {"mu_pos": mu_pos, "mu_neg": mu_neg, "cov_pos": np.linalg.inv(p_pos @ p_pos.T),
                    "cov_neg": np.linalg.inv(p_neg @ p_neg.T), "delta": delta}
        k = self.n_features_in_
        if k == 1:
            return {"w": np.array([np.exp(self.params_[0])]), "delta": float(self.params_[1])}
        w = self.params_[:k].copy()
        w[0] += 1.0
        return {"w": w, "delta": float(self.params_[k])}


@register("beta")
class BetaCalibration(_ScalingCalibrator):
    """Beta calibration.

    Univariate: ``sigmoid(a log p - b log(1 - p) + c)`` with ``a, b > 0``.
    Multivariate independent: one ``(a_k, b_k)`` pair per feature and a shared
    bias. Dependent: log ratio of two multivariate beta densities of the
    Libby-Novick family with positive shapes ``alpha`` (K + 1) and ``lambda`` (K).
    """

    box_shape_init = 1e-2

    def __init__(self, dependent=False):
        self.dependent = dependent

    def _validate_dims(self):
        if self.dependent and self.n_features_in_ < 2:
            raise ValueError("dependent calibration needs at least 2 features")

    def _n_params(self, k):
        return 4 * k + 3 if self.dependent else 2 * k + 1

    def _design(self, X):
        return clip_probability(X, CONF_EPS)

    def _initial_params(self, F, y):
        k = F.shape[1]
        if self.dependent:
            prior = np.clip(y.mean(), 1e-3, 1 - 1e-3)
            start = np.zeros(4 * k + 3)
            start[-1] = np.log(prior / (1 - prior))
            return start
        start = np.zeros(2 * k + 1)
        start[1:k] = np.log(self.box_shape_init)
        start[k + 1:2 * k] = np.log(self.box_shape_init)
        return start

    def _lr(self, params, F, jac=False):
        n, k = F.shape
        if not self.dependent:
            a, b = np.exp(params[:k]), np.exp(params[k:2 * k])
            log_p, log_q = np.log(F), np.log1p(-F)
            lr = log_p @ a - log_q @ b + params[-1]
            if not jac:
                return lr
            return lr, np.concatenate([log_p * a, -log_q * b, np.ones((n, 1))], axis=1)
        alpha_pos = np.exp(params[:k + 1])
        alpha_neg = np.exp(params[k + 1:2 * k + 2])
        lam_pos = np.exp(params[2 * k + 2:3 * k + 2])
        lam_neg = np.exp(params[3 * k + 2:4 * k + 2])
        delta = params[-1]
        odds = F / (1.0 - F)
        log_odds = np.log(odds)
        s_pos = 1.0 + odds @ lam_pos
        s_neg = 1.0 + odds @ lam_neg
        log_s_pos, log_s_neg = np.log(s_pos), np.log(s_neg)
        total_pos, total_neg = alpha_pos.sum(), alpha_neg.sum()
        lr = (np.sum(alpha_pos[1:] * np.log(lam_pos)) - np.sum(alpha_neg[1:] * np.log(lam_neg))
              + log_odds @ (alpha_pos[1:] - alpha_neg[1:])
              + total_neg * log_s_neg - total_pos * log_s_pos + delta)
        if not jac:
            return lr
        g_alpha_pos = np.empty((n, k + 1))
        g_alpha_pos[:, 0] = -log_s_pos
        g_alpha_pos[:, 1:] = np.log(lam_pos) + log_odds - log_s_pos[:, None]
        g_alpha_neg = np.empty((n, k + 1))
        g_alpha_neg[:, 0] = log_s_neg
        g_alpha_neg[:, 1:] = -np.log(lam_neg) - log_odds + log_s_neg[:, None]
        g_lam_pos = alpha_pos[1:] / lam_pos - total_pos * odds / s_pos[:, None]
        g_lam_neg = -alpha_neg[1:] / lam_neg + total_neg * odds / s_neg[:, None]
        J = np.concatenate([g_alpha_pos * alpha_pos, g_alpha_neg * alpha_neg, g_lam_pos * lam_pos,
                            g_lam_neg * lam_neg, np.ones((n, 1))], axis=1)
        return lr, J

    def coefficients(self):
        check_is_fitted(self, "params_")
        k = self.n_features_in_
        p = self.params_
        if self.dependent:
            return {"alpha_pos": np.exp(p[:k + 1]), "alpha_neg": np.exp(p[k + 1:2 * k + 2]),
                    "lambda_pos": np.exp(p[2 * k + 2:3 * k + 2]),
                    "lambda_neg": np.exp(p[3 * k + 2:4 * k + 2]), "delta": float(p[-1])}
        return {"a": np.exp(p[:k]), "b": np.exp(p[k:2 * k]), "c": float(p[-1])}
