"""Calibrated predictive distributions for box regression.

All containers hold per-sample, per-dimension distributions with arrays of
shape ``(n, L)`` (parametric) or ``(n, L, T)`` (non-parametric support).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from ..metrics.regression import gaussian_quantile


@dataclass(frozen=True)
class GaussianDistribution:
    """Independent Gaussians, or a full covariance when ``cov`` is given."""

    mean: np.ndarray
    var: np.ndarray
    cov: np.ndarray | None = None

    def __post_init__(self):
        if np.any(np.asarray(self.var) <= 0):
            raise ValueError("Gaussian variances must be positive")

    @property
    def std(self):
        return np.sqrt(self.var)

    def cdf(self, x):
        return ndtr((np.asarray(x) - self.mean) / self.std)

    def pdf(self, x):
        z = (np.asarray(x) - self.mean) / self.std
        return np.exp(-0.5 * z * z) / (np.sqrt(2 * np.pi) * self.std)

    def quantile(self, tau):
        return gaussian_quantile(self.mean, self.std, tau)

    def nll(self, x) -> np.ndarray:
        """Per-sample, per-dimension negative log density."""
        z2 = (np.asarray(x) - self.mean) ** 2 / self.var
        return 0.5 * (np.log(2 * np.pi * self.var) + z2)

    def covariance(self) -> np.ndarray:
        if self.cov is not None:
            return self.cov
        n, L = self.var.shape
        out = np.zeros((n, L, L))
        out[:, np.arange(L), np.arange(L)] = self.var
        return out


@dataclass(frozen=True)
class CauchyDistribution:
    loc: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.scale) <= 0):
            raise ValueError("Cauchy scales must be positive")

    def cdf(self, x):
        return 0.5 + np.arctan((np.asarray(x) - self.loc) / self.scale) / np.pi

    def pdf(self, x):
        z = (np.asarray(x) - self.loc) / self.scale
        return 1.0 / (np.pi * self.scale * (1.0 + z * z))

    def quantile(self, tau):
        return self.loc + self.scale * np.tan(np.pi * (np.asarray(tau) - 0.5))

    def nll(self, x) -> np.ndarray:
        z = (np.asarray(x) - self.loc) / self.scale
        return np.log(np.pi * self.scale) + np.log1p(z * z)


@dataclass(frozen=True)
class NonParametricDistribution:
    """CDF values on a per-sample support grid.

    Attributes
    ----------
    support : ndarray (n, L, T)
        Strictly increasing evaluation points.
    cdf_values : ndarray (n, L, T)
        Nondecreasing CDF values with ``cdf_values[..., 0] == 0`` and
        ``cdf_values[..., -1] == 1``.
    """

    support: np.ndarray
    cdf_values: np.ndarray

    def __post_init__(self):
        if self.support.shape != self.cdf_values.shape:
            raise ValueError("support and CDF values differ in shape")
        if np.any(np.diff(self.cdf_values, axis=-1) < -1e-12):
            raise ValueError("CDF values must be nondecreasing")

    @classmethod
    def from_unnormalized(cls, support, values):
        """Clamp tail mass by rescaling the end points to exactly 0 and 1."""
        values = np.maximum.accumulate(values, axis=-1)
        lo, hi = values[..., :1], values[..., -1:]
        span = hi - lo
        flat = span <= 0
        span = np.where(flat, 1.0, span)
        cdf = np.where(flat, np.linspace(0.0, 1.0, support.shape[-1]), (values - lo) / span)
        return cls(support, np.clip(cdf, 0.0, 1.0))

    @property
    def n_points(self):
        return self.support.shape[-1]

    def _locate(self, x):
        """Index of the grid cell holding ``x`` and the fractional offset inside it."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.support[..., 0], self.support[..., -1]
        step = (hi - lo) / (self.n_points - 1)
        pos = np.clip((x - lo) / step, 0.0, self.n_points - 1 - 1e-9)
        idx = np.floor(pos).astype(int)
        return idx, pos - idx

    def cdf(self, x):
        """CDF at ``x`` (shape (n, L)) by linear interpolation on a uniform grid."""
        idx, frac = self._locate(x)
        a = np.take_along_axis(self.cdf_values, idx[..., None], -1)[..., 0]
        b = np.take_along_axis(self.cdf_values, idx[..., None] + 1, -1)[..., 0]
        return a + frac * (b - a)

    def densities(self):
        """Densities at the support points by finite differences of the CDF."""
        return np.gradient(self.cdf_values, axis=-1) / np.gradient(self.support, axis=-1)

    def pdf(self, x):
        idx, frac = self._locate(x)
        a = np.take_along_axis(self.cdf_values, idx[..., None], -1)[..., 0]
        b = np.take_along_axis(self.cdf_values, idx[..., None] + 1, -1)[..., 0]
        step = self.support[..., 1] - self.support[..., 0]
        return (b - a) / step

    def quantile(self, tau):
        """Inverse CDF by linear interpolation between bracketing support points."""
        tau = float(tau)
        if not 0.0 <= tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        above = np.sum(self.cdf_values < tau, axis=-1)
        hi = np.clip(above, 1, self.n_points - 1)
        lo = hi - 1
        c_lo = np.take_along_axis(self.cdf_values, lo[..., None], -1)[..., 0]
        c_hi = np.take_along_axis(self.cdf_values, hi[..., None], -1)[..., 0]
        x_lo = np.take_along_axis(self.support, lo[..., None], -1)[..., 0]
        x_hi = np.take_along_axis(self.support, hi[..., None], -1)[..., 0]
        gap = c_hi - c_lo
        frac = np.divide(tau - c_lo, gap, out=np.full_like(gap, 0.5), where=gap > 0)
        return x_lo + np.clip(frac, 0.0, 1.0) * (x_hi - x_lo)

    def nll(self, x, floor=1e-300) -> np.ndarray:
        return -np.log(np.maximum(self.pdf(x), floor))


def gaussian_support(mean, var, n_points=512, span=8.0):
    """Uniform grids over ``mean +- span * std`` with shape (n, L, T)."""
    grid = np.linspace(-span, span, n_points)
    return np.asarray(mean)[..., None] + np.sqrt(var)[..., None] * grid


def moment_match(dist: NonParametricDistribution) -> GaussianDistribution:
    """Gaussian with the mean and variance of a non-parametric distribution.

    Each grid interval carries its CDF increment as probability mass at its
    midpoint.
    """
    mass = np.diff(dist.cdf_values, axis=-1)
    mid = 0.5 * (dist.support[..., 1:] + dist.support[..., :-1])
    total = np.maximum(mass.sum(axis=-1, keepdims=True), 1e-300)
    mean = np.sum(mass * mid, axis=-1, keepdims=True) / total
    var = np.sum(mass * (mid - mean) ** 2, axis=-1) / total[..., 0]
    step = dist.support[..., 1] - dist.support[..., 0]
    # a point mass has no spread; keep the variance strictly positive
    var = np.maximum(var, (step ** 2) / 12.0)
    return GaussianDistribution(mean[..., 0], var)
