"""Recalibration of Gaussian box-regression uncertainty.

Every estimator consumes ``X = [means | variances]`` of shape ``(n, 2L)`` and
targets ``y`` of shape ``(n, L)``; ``transform`` returns a calibrated
predictive distribution (see :mod:`detcal.calibration.distributions`).
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit, log_ndtr, ndtr
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _gp
from .base import SerializableMixin, check_targets, register, split_gaussian
from .distributions import (CauchyDistribution, GaussianDistribution, NonParametricDistribution,
                            gaussian_support)

LOG_2PI = np.log(2 * np.pi)


def pav(y, weights=None) -> np.ndarray:
    """Pool-adjacent-violators: least-squares nondecreasing fit to ``y``."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    values, wsum, sizes = [], [], []
    for yi, wi in zip(y, w):
        values.append(yi)
        wsum.append(wi)
        sizes.append(1)
        while len(values) > 1 and values[-2] > values[-1]:
            v, ww, s = values.pop(), wsum.pop(), sizes.pop()
            total = wsum[-1] + ww
            values[-1] = (values[-1] * wsum[-1] + v * ww) / total
            wsum[-1] = total
            sizes[-1] += s
    return np.repeat(values, sizes)


def isotonic_knots(x, y):
    """Breakpoints of the PAV fit of ``y`` on ``x``: first and last x of every pooled block."""
    order = np.argsort(x, kind="stable")
    xs, fitted = np.asarray(x, dtype=float)[order], pav(np.asarray(y, dtype=float)[order])
    change = np.flatnonzero(np.diff(fitted) != 0)
    starts = np.concatenate([[0], change + 1])
    ends = np.concatenate([change, [len(xs) - 1]])
    kx = np.column_stack([xs[starts], xs[ends]]).ravel()
    ky = np.column_stack([fitted[starts], fitted[ends]]).ravel()
    keep = np.concatenate([[True], np.diff(kx) > 0])
    # coincident x at a block boundary keeps the first value
    return kx[keep], ky[keep]


class RegressionCalibrator(SerializableMixin, BaseEstimator):
    """Base class: input handling and chunked summaries of the calibrated distribution."""

    chunk_size = 1024

    def _check_fit_input(self, X, y):
        mean, var = split_gaussian(X)
        if len(mean) == 0:
            raise ValueError("no samples")
        y = check_targets(y, len(mean), mean.shape[1])
        return mean, var, y

    def _check_input(self, X):
        check_is_fitted(self, "n_dims_")
        return split_gaussian(X, self.n_dims_)

    def transform(self, X):
        raise NotImplementedError

    def _chunks(self, X):
        X = np.asarray(X, dtype=float)
        for start in range(0, len(X), self.chunk_size):
            yield slice(start, start + self.chunk_size), X[start:start + self.chunk_size]

    def interval(self, X, tau: float):
        """Central ``tau`` prediction interval per sample and dimension."""
        lower, upper = [], []
        for _, Xc in self._chunks(X):
            d = self.transform(Xc)
            lower.append(d.quantile((1.0 - tau) / 2.0))
            upper.append(d.quantile((1.0 + tau) / 2.0))
        return np.concatenate(lower), np.concatenate(upper)

    def quantile(self, X, tau: float) -> np.ndarray:
        return np.concatenate([self.transform(Xc).quantile(tau) for _, Xc in self._chunks(X)])

    def nll(self, X, y) -> np.ndarray:
        """Per-sample, per-dimension negative log-likelihood of the targets."""
        y = np.asarray(y, dtype=float).reshape(len(X), -1)
        return np.concatenate([self.transform(Xc).nll(y[sl]) for sl, Xc in self._chunks(X)])

    def score(self, X, y) -> float:
        return -float(np.mean(self.nll(X, y)))


@register("isotonic")
class IsotonicRecalibration(RegressionCalibrator):
    """Monotone map from predicted CDF values to observed frequencies, per dimension.

    Parameters
    ----------
    n_points : int
        Support points of the calibrated CDF.
    span : float
        Half-width of the support in predicted standard deviations.
    """

    def __init__(self, n_points=512, span=8.0):
        self.n_points = n_points
        self.span = span

    def fit(self, X, y):
        mean, var, y = self._check_fit_input(X, y)
        if len(mean) < 2:
            raise ValueError("isotonic recalibration needs at least two samples per dimension")
        self.knots_x_, self.knots_y_ = [], []
        for d in range(mean.shape[1]):
            u = ndtr((y[:, d] - mean[:, d]) / np.sqrt(var[:, d]))
            ecdf = np.searchsorted(np.sort(u), u, side="right") / len(u)
            kx, ky = isotonic_knots(u, ecdf)
            self.knots_x_.append(kx)
            self.knots_y_.append(ky)
        self.n_dims_ = mean.shape[1]
        return self

    def calibrate_cdf(self, u, dim: int):
        """Apply the fitted monotone map of dimension ``dim``; clamps outside the knots."""
        return np.interp(u, self.knots_x_[dim], self.knots_y_[dim])

    def transform(self, X) -> NonParametricDistribution:
        mean, var = self._check_input(X)
        support = gaussian_support(mean, var, self.n_points, self.span)
        u = ndtr((support - mean[..., None]) / np.sqrt(var)[..., None])
        G = np.stack([self.calibrate_cdf(u[:, d], d) for d in range(self.n_dims_)], axis=1)
        return NonParametricDistribution.from_unnormalized(support, G)

    def _state(self):
        return {"knots_x": [k.tolist() for k in self.knots_x_],
                "knots_y": [k.tolist() for k in self.knots_y_]}

    def _load_state(self, state):
        self.knots_x_ = [np.asarray(k, dtype=float) for k in state["knots_x"]]
        self.knots_y_ = [np.asarray(k, dtype=float) for k in state["knots_y"]]
        self.n_dims_ = len(self.knots_x_)


@register("variance_scaling")
class VarianceScaling(RegressionCalibrator):
    """One multiplicative scale per dimension on the predicted standard deviation.

    The Gaussian NLL minimizer has the closed form
    ``w = sqrt(mean((y - mu)^2 / sigma^2))``.
    """

    def fit(self, X, y):
        mean, var, y = self._check_fit_input(X, y)
        self.scale_ = np.sqrt(np.mean((y - mean) ** 2 / var, axis=0))
        if np.any(self.scale_ <= 0):
            raise ValueError("residuals are identically zero in some dimension")
        self.n_dims_ = mean.shape[1]
        return self

    def transform(self, X) -> GaussianDistribution:
        mean, var = self._check_input(X)
        return GaussianDistribution(mean, var * self.scale_ ** 2)

    def _state(self):
        return {"scale": self.scale_.tolist()}

    def _load_state(self, state):
        self.scale_ = np.asarray(state["scale"], dtype=float)
        self.n_dims_ = len(self.scale_)


def _subsample(n, max_points, seed):
    if n <= max_points:
        return np.arange(n)
    rng = np.random.Generator(np.random.Philox(seed))
    return np.sort(rng.choice(n, size=max_points, replace=False))


class _GPRecalibrator(RegressionCalibrator):
    """Latent GP over the input distribution driving per-sample calibration parameters.

    Parameters
    ----------
    max_points : int
        Training points kept after random subsampling.
    theta : float, optional
        Kernel length scale; searched on a log grid by golden section when None.
    multivariate : bool
        One GP on the joint L-dimensional input with coregionalized outputs
        instead of one GP per dimension.
    seed : int
        Subsampling seed.
    max_iter : int
        L-BFGS iterations per MAP fit.

    Notes
    -----
    The GP prior has a constant mean per dimension and latent (``offset_``),
    the best input-independent calibration, so the GP only models deviations
    from it.
    """

    n_latent = 1
    curvature = 1.0
    min_samples = 16

    def __init__(self, max_points=1024, theta=None, multivariate=False, seed=0, max_iter=500):
        self.max_points = max_points
        self.theta = theta
        self.multivariate = multivariate
        self.seed = seed
        self.max_iter = max_iter

    def _loss(self, W, resid, var):
        """Summed NLL and gradient for latents ``W`` of shape (M, L, n_latent)."""
        raise NotImplementedError

    def _coregionalization(self, resid, var):
        return np.eye(resid.shape[1] * self.n_latent)

    def _offset(self, resid, var) -> np.ndarray:
        """Constant prior mean of the latents, shape (L, n_latent)."""
        return np.zeros((resid.shape[1], self.n_latent))

    def _make_loss(self, resid, var, offset):
        M, L = resid.shape

        def loss_fn(W):
            loss, G = self._loss(W.reshape(M, L, self.n_latent) + offset, resid, var)
            return loss, G.reshape(M, L * self.n_latent)
        return loss_fn

    def fit(self, X, y):
        mean, var, y = self._check_fit_input(X, y)
        if len(mean) < self.min_samples:
            raise ValueError(f"GP recalibration needs at least {self.min_samples} samples")
        self.offset_ = self._offset(y - mean, var)
        idx = _subsample(len(mean), self.max_points, self.seed)
        mean, var, resid = mean[idx], var[idx], (y - mean)[idx]
        L = mean.shape[1]
        if self.multivariate:
            B = self._coregionalization(resid, var)
            self.gps_ = [_gp.fit_latent_gp(mean, var, self._make_loss(resid, var, self.offset_),
                                           L * self.n_latent, self.theta, B, self.curvature,
                                           max_iter=self.max_iter)]
        else:
            self.gps_ = [_gp.fit_latent_gp(mean[:, [d]], var[:, [d]],
                                           self._make_loss(resid[:, [d]], var[:, [d]], self.offset_[[d]]),
                                           self.n_latent, self.theta, None, self.curvature,
                                           max_iter=self.max_iter)
                         for d in range(L)]
        self.n_dims_ = L
        return self

    def latents(self, mean, var) -> np.ndarray:
        """Predicted latents at the given inputs, shape (n, L, n_latent)."""
        n = len(mean)
        if self.multivariate:
            W = self.gps_[0].predict(mean, var).reshape(n, self.n_dims_, self.n_latent)
        else:
            W = np.stack([gp.predict(mean[:, [d]], var[:, [d]]) for d, gp in enumerate(self.gps_)], axis=1)
        return W + self.offset_

    def transform(self, X):
        mean, var = self._check_input(X)
        return self._output(mean, var, self.latents(mean, var))

    def _output(self, mean, var, W):
        raise NotImplementedError

    def _state(self):
        return {"n_dims": self.n_dims_, "offset": self.offset_.tolist(),
                "gps": [gp.to_dict() for gp in self.gps_]}

    def _load_state(self, state):
        self.n_dims_ = int(state["n_dims"])
        self.offset_ = np.asarray(state["offset"], dtype=float).reshape(self.n_dims_, -1)
        self.gps_ = [_gp.LatentGP.from_dict(g) for g in state["gps"]]


def _log_magnitude_coregionalization(resid, var):
    z = np.log(np.abs(resid) / np.sqrt(var) + 1e-12)
    if z.shape[1] == 1:
        return np.eye(1)
    return _gp.low_rank_plus_diagonal(np.corrcoef(z.T))


@register("gp_normal")
class GPNormal(_GPRecalibrator):
    """Gaussian output with input-dependent scale ``sigma' = exp(w(x)) * sigma``."""

    curvature = 2.0

    def _loss(self, W, resid, var):
        w = W[..., 0]
        u = resid ** 2 / var * np.exp(-2.0 * w)
        loss = np.sum(w + 0.5 * u + 0.5 * np.log(var) + 0.5 * LOG_2PI)
        return loss, (1.0 - u)[..., None]

    def _coregionalization(self, resid, var):
        return _log_magnitude_coregionalization(resid, var)

    def _offset(self, resid, var):
        return 0.5 * np.log(np.mean(resid ** 2 / var, axis=0))[:, None]

    def _output(self, mean, var, W):
        return GaussianDistribution(mean, var * np.exp(2.0 * W[..., 0]))


@register("gp_cauchy")
class GPCauchy(_GPRecalibrator):
    """Cauchy output centered at the mean with scale ``gamma = exp(w(x)) * sigma``."""

    curvature = 0.5

    def _loss(self, W, resid, var):
        w = W[..., 0]
        u = resid ** 2 / var * np.exp(-2.0 * w)
        loss = np.sum(w + np.log1p(u) + 0.5 * np.log(var) + np.log(np.pi))
        return loss, (1.0 - 2.0 * u / (1.0 + u))[..., None]

    def _coregionalization(self, resid, var):
        return _log_magnitude_coregionalization(resid, var)

    def _offset(self, resid, var):
        # the median absolute standardized residual estimates a Cauchy scale
        return np.log(np.median(np.abs(resid) / np.sqrt(var), axis=0))[:, None]

    def _output(self, mean, var, W):
        return CauchyDistribution(mean, np.sqrt(var) * np.exp(W[..., 0]))


def beta_link_terms(z, W):
    """Beta-link quantities for standardized residuals ``z`` and latents (..., 3).

    Returns the log-odds ``s`` of the calibrated CDF, ``log h'`` where
    ``h' = a/F + b/(1-F)`` and the log CDF terms.
    """
    a_log, b_log, c = W[..., 0], W[..., 1], W[..., 2]
    log_F, log_1mF = log_ndtr(z), log_ndtr(-z)
    s = np.exp(a_log) * log_F - np.exp(b_log) * log_1mF + c
    log_h = np.logaddexp(a_log - log_F, b_log - log_1mF)
    return s, log_h, log_F, log_1mF


@register("gp_beta")
class GPBeta(_GPRecalibrator):
    """Beta-link recalibration of the predicted CDF with GP-driven parameters.

    The calibrated CDF is ``G = sigmoid(a log F - b log(1 - F) + c)`` with
    ``a = exp(w_a)``, ``b = exp(w_b)``, ``c = w_c``; zero latents give ``G = F``.
    """

    n_latent = 3
    curvature = 1.0

    def __init__(self, max_points=1024, theta=None, multivariate=False, seed=0, max_iter=500,
                 n_points=512, span=8.0):
        super().__init__(max_points, theta, multivariate, seed, max_iter)
        self.n_points = n_points
        self.span = span

    def _loss(self, W, resid, var):
        z = resid / np.sqrt(var)
        s, log_h, log_F, log_1mF = beta_link_terms(z, W)
        G = expit(s)
        log_f = -0.5 * z * z - 0.5 * LOG_2PI - 0.5 * np.log(var)
        loss = np.sum(np.logaddexp(0.0, -s) + np.logaddexp(0.0, s) - log_h - log_f)
        ds = 2.0 * G - 1.0
        a, b = np.exp(W[..., 0]), np.exp(W[..., 1])
        frac_a = np.exp(W[..., 0] - log_F - log_h)
        frac_b = np.exp(W[..., 1] - log_1mF - log_h)
        grad = np.stack([ds * a * log_F - frac_a, -ds * b * log_1mF - frac_b, ds], axis=-1)
        return loss, grad

    def _output(self, mean, var, W):
        support = gaussian_support(mean, var, self.n_points, self.span)
        z = (support - mean[..., None]) / np.sqrt(var)[..., None]
        s, *_ = beta_link_terms(z, W[:, :, None, :])
        return NonParametricDistribution.from_unnormalized(support, expit(s))

    def log_density(self, X, y) -> np.ndarray:
        """Exact log density of the calibrated distribution at ``y``."""
        mean, var = self._check_input(X)
        y = np.asarray(y, dtype=float).reshape(mean.shape)
        W = self.latents(mean, var)
        z = (y - mean) / np.sqrt(var)
        s, log_h, _, _ = beta_link_terms(z, W)
        log_f = -0.5 * z * z - 0.5 * LOG_2PI - 0.5 * np.log(var)
        return -np.logaddexp(0.0, -s) - np.logaddexp(0.0, s) + log_h + log_f

    def nll(self, X, y) -> np.ndarray:
        return -self.log_density(X, y)


def ldl_batch(cov):
    """Unit lower-triangular ``L`` and diagonal ``D`` with ``cov = L diag(D) L^T``."""
    C = np.linalg.cholesky(cov)
    d = np.diagonal(C, axis1=-2, axis2=-1)
    return C / d[..., None, :], d ** 2


@register("covariance")
class CovarianceEstimation(_GPRecalibrator):
    """Full-covariance Gaussian output from diagonal predictions.

    A correlation prior ``Sigma = diag(sigma) R diag(sigma)`` uses the
    marginal correlations ``R`` of standardized training residuals. With
    ``use_gp`` the prior's LDL^T factors are rescaled per sample: the
    off-diagonal entries of ``L`` by ``1 + w`` and ``D`` by ``exp(w)``.
    """

    curvature = 1.0

    def __init__(self, max_points=1024, theta=None, seed=0, max_iter=500, use_gp=True):
        super().__init__(max_points, theta, True, seed, max_iter)
        self.use_gp = use_gp

    def _prior(self, var):
        std = np.sqrt(var)
        return self.corr_[None] * std[:, :, None] * std[:, None, :]

    def _factors(self, var, W):
        """Rescaled LDL factors for flat latents ``W`` of shape (n, P)."""
        L = self.n_dims_
        A, D = ldl_batch(self._prior(var))
        rows, cols = np.tril_indices(L, -1)
        if W is not None:
            D = D * np.exp(W[:, :L])
            A = A.copy()
            A[:, rows, cols] *= 1.0 + W[:, L:]
        return A, D

    def _n_outputs(self):
        L = self.n_dims_
        return L + L * (L - 1) // 2

    def _covariance_loss(self, W, resid, var):
        L = self.n_dims_
        A0, _ = ldl_batch(self._prior(var))
        A, D = self._factors(var, W)
        u = np.linalg.solve(A, resid[..., None])[..., 0]
        q = u / D
        loss = 0.5 * np.sum(np.log(D) + u * q) + 0.5 * L * LOG_2PI * len(resid)
        gD = 0.5 - 0.5 * u * q
        GA = -np.linalg.solve(np.swapaxes(A, -1, -2), q[..., None]) * u[:, None, :]
        rows, cols = np.tril_indices(L, -1)
        gL = GA[:, rows, cols] * A0[:, rows, cols]
        return loss, np.hstack([gD, gL])

    def fit(self, X, y):
        mean, var, y = self._check_fit_input(X, y)
        if len(mean) < self.min_samples:
            raise ValueError(f"covariance estimation needs at least {self.min_samples} samples")
        L = mean.shape[1]
        z = (y - mean) / np.sqrt(var)
        self.corr_ = np.corrcoef(z.T).reshape(L, L) if L > 1 else np.ones((1, 1))
        self.n_dims_ = L
        self.gps_ = []
        if self.use_gp:
            idx = _subsample(len(mean), self.max_points, self.seed)
            m, v, r = mean[idx], var[idx], (y - mean)[idx]
            self.gps_ = [_gp.fit_latent_gp(m, v, lambda W: self._covariance_loss(W, r, v),
                                           self._n_outputs(), self.theta, None, self.curvature,
                                           max_iter=self.max_iter)]
        return self

    def transform(self, X) -> GaussianDistribution:
        mean, var = self._check_input(X)
        W = self.gps_[0].predict(mean, var) if self.gps_ else None
        A, D = self._factors(var, W)
        cov = np.einsum("nij,nj,nkj->nik", A, D, A)
        cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
        return GaussianDistribution(mean, np.diagonal(cov, axis1=-2, axis2=-1).copy(), cov)

    def joint_nll(self, X, y) -> np.ndarray:
        """Per-sample multivariate Gaussian NLL under the full covariance."""
        d = self.transform(X)
        r = np.asarray(y, dtype=float) - d.mean
        C = np.linalg.cholesky(d.cov)
        u = np.linalg.solve(C, r[..., None])[..., 0]
        logdet = 2.0 * np.sum(np.log(np.diagonal(C, axis1=-2, axis2=-1)), axis=-1)
        return 0.5 * (logdet + np.sum(u * u, axis=-1) + r.shape[1] * LOG_2PI)

    def _state(self):
        return {"corr": self.corr_.tolist(), "gps": [gp.to_dict() for gp in self.gps_]}

    def _load_state(self, state):
        self.corr_ = np.asarray(state["corr"], dtype=float)
        self.n_dims_ = len(self.corr_)
        self.gps_ = [_gp.LatentGP.from_dict(g) for g in state["gps"]]
