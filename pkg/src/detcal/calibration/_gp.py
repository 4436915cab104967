"""Latent Gaussian-process machinery shared by the GP recalibrators.

Inputs are Gaussian distributions ``(mean, var)`` with diagonal variances.
The kernel is the Gaussian embedding of two inputs under an RBF kernel of
length scale ``theta``:

    k(i, j) = theta^L |S_ij|^{-1/2} exp(-0.5 (mu_i - mu_j)^T S_ij^{-1} (mu_i - mu_j)),
    S_ij = diag(var_i + var_j + theta^2).

The prior covariance of the latents is ``B (x) amplitude * K``. Latent
functions are fitted by MAP over a whitened parameterization
``W = chol(K) V chol(B)^T`` so the prior term is ``0.5 ||V||^2``; predictions
use the GP posterior mean conditioned on the MAP latents. An amplitude of
zero is the constant model (all latents at their prior mean).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

JITTER_START = 1e-6
JITTER_MAX = 1e-2
GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
AMPLITUDES = (1.0, 0.1, 0.01, 0.0)


def embedding_kernel(mean_a, var_a, mean_b, var_b, theta: float, chunk: int = 2048) -> np.ndarray:
    """Kernel matrix between two sets of diagonal Gaussians, shape (n_a, n_b)."""
    mean_a, var_a = np.atleast_2d(mean_a), np.atleast_2d(var_a)
    mean_b, var_b = np.atleast_2d(mean_b), np.atleast_2d(var_b)
    L = mean_a.shape[1]
    out = np.empty((len(mean_a), len(mean_b)))
    log_amp = L * np.log(theta)
    for start in range(0, len(mean_a), chunk):
        sl = slice(start, start + chunk)
        S = var_a[sl, None, :] + var_b[None, :, :] + theta ** 2
        d = mean_a[sl, None, :] - mean_b[None, :, :]
        out[sl] = np.exp(log_amp - 0.5 * np.sum(np.log(S) + d * d / S, axis=-1))
    return out


def stable_cholesky(K):
    """Lower Cholesky factor of ``K + jitter I``, escalating jitter by 10x up to 1e-2."""
    jitter = JITTER_START
    eye = np.eye(len(K))
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return linalg.cholesky(K + jitter * eye, lower=True), jitter
        except linalg.LinAlgError:
            jitter *= 10.0
    raise linalg.LinAlgError("kernel matrix is not positive definite even with jitter 1e-2")


def low_rank_plus_diagonal(C, floor=0.05) -> np.ndarray:
    """Rank-1 plus diagonal PSD approximation of a correlation matrix."""
    C = np.asarray(C, dtype=float)
    vals, vecs = np.linalg.eigh(C)
    u = vecs[:, -1] * np.sqrt(max(vals[-1], 0.0))
    B = np.outer(u, u)
    B[np.diag_indices_from(B)] += np.maximum(1.0 - np.diag(B), floor)
    return B


@dataclass
class LatentGP:
    """Fitted latent GP: training inputs, MAP latents and kernel settings."""

    mean: np.ndarray      # (M, L)
    var: np.ndarray       # (M, L)
    latents: np.ndarray   # (M, P)
    theta: float
    jitter: float
    B: np.ndarray         # (P, P)
    amplitude: float = 1.0
    objective: float = np.nan
    n_iter: int = 0

    def __post_init__(self):
        if self.amplitude == 0:
            self._alpha = np.zeros_like(self.latents)
            return
        K = self.amplitude * embedding_kernel(self.mean, self.var, self.mean, self.var, self.theta)
        K[np.diag_indices_from(K)] += self.jitter
        self._alpha = linalg.cho_solve(linalg.cho_factor(K, lower=True), self.latents)

    def predict(self, mean, var, chunk: int = 2048) -> np.ndarray:
        """Posterior mean of the latents at new inputs, shape (n, P)."""
        mean, var = np.atleast_2d(mean), np.atleast_2d(var)
        out = np.empty((len(mean), self.latents.shape[1]))
        for start in range(0, len(mean), chunk):
            sl = slice(start, start + chunk)
            k = embedding_kernel(mean[sl], var[sl], self.mean, self.var, self.theta)
            out[sl] = self.amplitude * k @ self._alpha
        return out

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "var": self.var.tolist(), "latents": self.latents.tolist(),
                "theta": self.theta, "jitter": self.jitter, "B": self.B.tolist(),
                "amplitude": self.amplitude}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["var"], dtype=float),
                   np.asarray(d["latents"], dtype=float), float(d["theta"]), float(d["jitter"]),
                   np.asarray(d["B"], dtype=float), float(d.get("amplitude", 1.0)))


def map_latents(mean, var, loss_fn, n_outputs, theta, B=None, max_iter=500, V0=None, amplitude=1.0):
    """MAP latents for a fixed length scale.

    Parameters
    ----------
    loss_fn : callable
        ``loss_fn(W) -> (loss, dloss/dW)`` for latents ``W`` of shape (M, P).

    Returns
    -------
    W, V, objective, jitter, K, n_iter, trace
        ``K`` includes the jitter; ``trace`` holds the objective after every
        optimizer iteration.
    """
    M = len(mean)
    B = np.eye(n_outputs) if B is None else np.asarray(B, dtype=float)
    if amplitude == 0:
        W = np.zeros((M, n_outputs))
        return W, W, float(loss_fn(W)[0]), 0.0, np.zeros((M, M)), 0, []
    K = amplitude * embedding_kernel(mean, var, mean, var, theta)
    L_K, jitter = stable_cholesky(K)
    K[np.diag_indices_from(K)] += jitter
    L_B = np.linalg.cholesky(B)

    def fun(v):
        V = v.reshape(M, n_outputs)
        W = L_K @ V @ L_B.T
        loss, G = loss_fn(W)
        grad = L_K.T @ G @ L_B + V
        return loss + 0.5 * np.dot(v, v), grad.ravel()

    trace = []
    v0 = np.zeros(M * n_outputs) if V0 is None else V0.ravel()
    res = optimize.minimize(fun, v0, jac=True, method="L-BFGS-B",
                            callback=lambda intermediate_result: trace.append(intermediate_result.fun),
                            options={"maxiter": max_iter, "ftol": 1e-12, "gtol": 1e-6})
    V = res.x.reshape(M, n_outputs)
    return L_K @ V @ L_B.T, V, float(res.fun), jitter, K, int(res.nit), trace


def laplace_evidence(objective, K, B, curvature) -> float:
    """Negative log evidence under a Laplace approximation with constant curvature.

    The likelihood Hessian is approximated by ``curvature * I``, giving
    ``objective + 0.5 * sum log(1 + c * lambda_B * lambda_K)``.
    """
    lam_K = np.maximum(linalg.eigvalsh(K, overwrite_a=True, check_finite=False), 0.0)
    lam_B = np.maximum(np.linalg.eigvalsh(B), 0.0)
    return objective + 0.5 * np.sum(np.log1p(curvature * np.outer(lam_B, lam_K)))


def fit_latent_gp(mean, var, loss_fn, n_outputs, theta=None, B=None, curvature=1.0,
                  bracket=None, n_search=8, max_iter=500) -> LatentGP:
    """Fit latents, choosing ``theta`` by golden-section search over ``log theta``.

    The MAP objective alone favors ever smoother, larger-amplitude kernels,
    so the search criterion adds the Laplace log-determinant term. At the
    selected ``theta`` the kernel amplitude is then chosen from
    ``AMPLITUDES`` by the same criterion.
    """
    mean, var = np.asarray(mean, dtype=float), np.asarray(var, dtype=float)
    B = np.eye(n_outputs) if B is None else np.asarray(B, dtype=float)
    if theta is not None:
        W, _, obj, jitter, _, nit, _ = map_latents(mean, var, loss_fn, n_outputs, theta, B, max_iter)
        return LatentGP(mean, var, W, float(theta), jitter, B, 1.0, obj, nit)
    if bracket is None:
        lo = np.sqrt(np.median(var))
        hi = 2.0 * np.max(np.ptp(mean, axis=0)) + lo
        bracket = (lo, max(hi, 10 * lo))
    cache = {}

    def criterion(log_theta, amplitude=1.0):
        W, V, obj, jitter, K, nit, _ = map_latents(mean, var, loss_fn, n_outputs,
                                                   np.exp(log_theta), B, max_iter, amplitude=amplitude)
        score = laplace_evidence(obj, K, B, curvature)
        cache[log_theta, amplitude] = (score, W, obj, jitter, nit)
        return score

    a, b = np.log(bracket[0]), np.log(bracket[1])
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = criterion(c), criterion(d)
    for _ in range(n_search):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = criterion(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = criterion(d)
    log_theta = min(cache, key=lambda k: cache[k][0])[0]
    for amplitude in AMPLITUDES[1:]:
        criterion(log_theta, amplitude)
    best = min(cache, key=lambda k: cache[k][0])
    _, W, obj, jitter, nit = cache[best]
    return LatentGP(mean, var, W, float(np.exp(best[0])), jitter, B, best[1], obj, nit)
