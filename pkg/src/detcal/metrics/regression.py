"""Calibration metrics for Gaussian spatial uncertainty.

Inputs follow one convention throughout: ``mean`` and ``target`` have shape
``(n, L)``; uncertainty is either per-dimension variances ``(n, L)`` or full
covariance matrices ``(n, L, L)``. Univariate metrics return one value per
dimension.
"""
from __future__ import annotations

import numpy as np
from scipy import special

TAU_GRID = np.round(np.arange(0.05, 0.951, 0.05), 2)


def gaussian_quantile(mu, sigma, tau):
    """Percent-point function of N(mu, sigma^2)."""
    tau = np.asarray(tau, dtype=float)
    if np.any((tau <= 0) | (tau >= 1)):
        raise ValueError("tau must lie in (0, 1)")
    return np.asarray(mu, dtype=float) + np.asarray(sigma, dtype=float) * special.ndtri(tau)


def _chi2_quantile_scalar(dof: int, tau: float, tol: float) -> float:
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    if dof < 1:
        raise ValueError("degrees of freedom must be >= 1")
    half = dof / 2.0
    lo, hi = 0.0, max(1.0, 2.0 * dof)
    while special.gammainc(half, hi / 2.0) < tau:
        lo, hi = hi, 2.0 * hi
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if special.gammainc(half, mid / 2.0) < tau:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def chi2_quantile(dof, tau, tol: float = 1e-13):
    """Quantile of the chi-square distribution by bisection on the regularized
    lower incomplete gamma function."""
    dof_b, tau_b = np.broadcast_arrays(np.asarray(dof), np.asarray(tau, dtype=float))
    out = np.array([_chi2_quantile_scalar(int(d), float(t), tol)
                    for d, t in zip(dof_b.ravel(), tau_b.ravel())])
    return out.reshape(dof_b.shape) if dof_b.ndim else float(out[0])


def _as_2d(a):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def as_covariance(cov, n_dims: int) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 1 and n_dims == 1:
        cov = cov[:, None]
    if cov.ndim == 2:
        if cov.shape[1] != n_dims:
            raise ValueError("variances must have one column per dimension")
        return cov[:, :, None] * np.eye(n_dims)[None]
    if cov.ndim == 3 and cov.shape[1:] == (n_dims, n_dims):
        return cov
    raise ValueError(f"cannot interpret covariance of shape {cov.shape} for {n_dims} dimensions")


def pinball(mean, std, target, tau) -> np.ndarray:
    """Mean pinball loss of the predicted tau-quantile, per dimension."""
    mean, std, target = _as_2d(mean), _as_2d(std), _as_2d(target)
    q = gaussian_quantile(mean, std, tau)
    diff = target - q
    loss = np.where(diff >= 0, diff * tau, -diff * (1.0 - tau))
    return loss.mean(axis=0)


def mean_pinball(mean, std, target, taus=TAU_GRID) -> np.ndarray:
    return np.mean([pinball(mean, std, target, t) for t in taus], axis=0)


def central_interval(mean, std, tau):
    half = gaussian_quantile(0.0, std, (1.0 + tau) / 2.0)
    return mean - half, mean + half


def interval_picp(mean, std, target, tau) -> np.ndarray:
    lo, hi = central_interval(_as_2d(mean), _as_2d(std), tau)
    target = _as_2d(target)
    return np.mean((target >= lo) & (target <= hi), axis=0)


def interval_mpiw(std, tau) -> np.ndarray:
    std = _as_2d(std)
    return np.mean(2.0 * gaussian_quantile(0.0, std, (1.0 + tau) / 2.0), axis=0)


def nees(mean, cov, target) -> np.ndarray:
    """Squared Mahalanobis distance of every target to its predicted Gaussian."""
    mean, target = _as_2d(mean), _as_2d(target)
    cov = as_covariance(cov, mean.shape[1])
    chol = np.linalg.cholesky(cov)
    resid = (target - mean)[..., None]
    white = np.linalg.solve(chol, resid)[..., 0]
    return np.sum(white ** 2, axis=1)


def m_qce(mean, cov, target, tau) -> float:
    mean = _as_2d(mean)
    radius = chi2_quantile(mean.shape[1], tau)
    return float(abs(np.mean(nees(mean, cov, target) <= radius) - tau))


def mean_m_qce(mean, cov, target, taus=TAU_GRID) -> float:
    return float(np.mean([m_qce(mean, cov, target, t) for t in taus]))


def sgv(cov, n_dims: int | None = None) -> np.ndarray:
    """Standardized generalized variance ``det(cov) ** (1 / L)`` per sample."""
    cov = np.asarray(cov, dtype=float)
    if n_dims is None:
        n_dims = cov.shape[-1]
    cov = as_covariance(cov, n_dims)
    sign, logdet = np.linalg.slogdet(cov)
    if np.any(sign <= 0):
        raise ValueError("covariance matrices must be positive definite")
    return np.exp(logdet / n_dims)


def _equal_width_bins(values, bins):
    top = values.max()
    if top <= 0:
        return np.zeros(len(values), dtype=int)
    return np.clip(np.floor(values / top * bins), 0, bins - 1).astype(int)


def c_qce(mean, cov, target, tau, bins: int = 20) -> float:
    """Quantile calibration error conditioned on the square-rooted SGV."""
    mean = _as_2d(mean)
    n_dims = mean.shape[1]
    inside = nees(mean, cov, target) <= chi2_quantile(n_dims, tau)
    index = _equal_width_bins(np.sqrt(sgv(cov, n_dims)), bins)
    total = 0.0
    for i in np.unique(index):
        members = index == i
        total += members.sum() * abs(inside[members].mean() - tau)
    return float(total / len(inside))


def mean_c_qce(mean, cov, target, taus=TAU_GRID, bins: int = 20) -> float:
    return float(np.mean([c_qce(mean, cov, target, t, bins) for t in taus]))


def uce(mean, var, target, bins: int = 20) -> np.ndarray:
    """Weighted absolute gap between MSE and mean variance over variance bins."""
    mean, var, target = _as_2d(mean), _as_2d(var), _as_2d(target)
    sq = (target - mean) ** 2
    out = np.zeros(mean.shape[1])
    for d in range(mean.shape[1]):
        index = _equal_width_bins(var[:, d], bins)
        for i in np.unique(index):
            members = index == i
            out[d] += members.sum() * abs(sq[members, d].mean() - var[members, d].mean())
    return out / len(mean)


def ence(mean, var, target, bins: int = 20) -> np.ndarray:
    """Unweighted normalized gap between RMSE and RMV over std-dev bins.

    Only populated bins are averaged.
    """
    mean, var, target = _as_2d(mean), _as_2d(var), _as_2d(target)
    sq = (target - mean) ** 2
    out = np.zeros(mean.shape[1])
    for d in range(mean.shape[1]):
        index = _equal_width_bins(np.sqrt(var[:, d]), bins)
        populated = np.unique(index)
        for i in populated:
            members = index == i
            rmv = np.sqrt(var[members, d].mean())
            out[d] += abs(np.sqrt(sq[members, d].mean()) - rmv) / rmv
        out[d] /= len(populated)
    return out


def gaussian_nll_terms(mean, cov, target) -> np.ndarray:
    """Per-sample negative log density of a (multivariate) Gaussian."""
    mean, target = _as_2d(mean), _as_2d(target)
    n_dims = mean.shape[1]
    cov = as_covariance(cov, n_dims)
    _, logdet = np.linalg.slogdet(cov)
    return 0.5 * (n_dims * np.log(2 * np.pi) + logdet + nees(mean, cov, target))


def nll_gaussian(mean, cov, target) -> float:
    return float(np.mean(gaussian_nll_terms(mean, cov, target)))


def nll_gaussian_per_dim(mean, var, target) -> np.ndarray:
    mean, var, target = _as_2d(mean), _as_2d(var), _as_2d(target)
    terms = 0.5 * (np.log(2 * np.pi * var) + (target - mean) ** 2 / var)
    return terms.mean(axis=0)


def nll_cauchy_per_dim(loc, scale, target) -> np.ndarray:
    loc, scale, target = _as_2d(loc), _as_2d(scale), _as_2d(target)
    terms = np.log(np.pi * scale) + np.log1p(((target - loc) / scale) ** 2)
    return terms.mean(axis=0)
