"""Second-order (constant-acceleration) Kalman filter over box position and size.

The state stacks the box ``(cx, cy, w, h)``, its velocity and its
acceleration; the observation is the box itself.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

N_OBS = 4
N_STATE = 12


@dataclass(frozen=True)
class KalmanConfig:
    """Kinematic model settings.

    Parameters
    ----------
    dt : float
        Time between frames.
    process_noise : float
        Variance ``q`` of the per-axis acceleration kick.
    initial_velocity_var, initial_acceleration_var : float
        Prior variances of a newly spawned track's derivatives.
    noise_model : {"white", "wiener"}
        ``"white"``: discrete white-noise acceleration, the kick moves position
        and velocity (gain ``(dt^2/2, dt, 0)``). ``"wiener"``: the acceleration
        itself random-walks (gain ``(dt^2/2, dt, 1)``).
    """

    dt: float = 1.0
    process_noise: float = 1e-7
    initial_velocity_var: float = 1e-4
    initial_acceleration_var: float = 0.0
    noise_model: str = "white"

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.noise_model not in ("white", "wiener"):
            raise ValueError("noise_model must be 'white' or 'wiener'")
        if min(self.process_noise, self.initial_velocity_var, self.initial_acceleration_var) < 0:
            raise ValueError("noise variances must be non-negative")

    def transition(self) -> np.ndarray:
        dt = self.dt
        block = np.array([[1.0, dt, dt * dt / 2], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])
        return np.kron(block, np.eye(N_OBS))

    def observation(self) -> np.ndarray:
        return np.hstack([np.eye(N_OBS), np.zeros((N_OBS, N_STATE - N_OBS))])

    def process_covariance(self) -> np.ndarray:
        """``q * g g^T`` per axis with the noise gain ``g`` of the chosen model."""
        g = np.array([self.dt ** 2 / 2, self.dt, 1.0 if self.noise_model == "wiener" else 0.0])
        return np.kron(self.process_noise * np.outer(g, g), np.eye(N_OBS))

    def initial_covariance(self, obs_cov) -> np.ndarray:
        P = np.zeros((N_STATE, N_STATE))
        P[:N_OBS, :N_OBS] = obs_cov
        P[N_OBS:2 * N_OBS, N_OBS:2 * N_OBS] = self.initial_velocity_var * np.eye(N_OBS)
        P[2 * N_OBS:, 2 * N_OBS:] = self.initial_acceleration_var * np.eye(N_OBS)
        return P


def symmetrize(P):
    return 0.5 * (P + P.T)


def kalman_predict(x, P, F, Q):
    return F @ x, symmetrize(F @ P @ F.T + Q)


def _innovation(x, P, z, R, H):
    S = symmetrize(H @ P @ H.T + R)
    try:
        chol = linalg.cho_factor(S, lower=True)
    except linalg.LinAlgError:
        raise linalg.LinAlgError("singular innovation covariance") from None
    return z - H @ x, chol


def nis(x, P, z, R, H) -> float:
    """Squared Mahalanobis distance of an observation from the predicted one."""
    nu, chol = _innovation(x, P, np.asarray(z, dtype=float), R, H)
    return float(nu @ linalg.cho_solve(chol, nu))


def kalman_update(x, P, z, R, H):
    """Measurement update with the Joseph-form covariance.

    Returns
    -------
    x, P, nis
    """
    z = np.asarray(z, dtype=float)
    nu, chol = _innovation(x, P, z, R, H)
    gain = linalg.cho_solve(chol, H @ P).T
    A = np.eye(len(x)) - gain @ H
    P_new = symmetrize(A @ P @ A.T + gain @ R @ gain.T)
    return x + gain @ nu, P_new, float(nu @ linalg.cho_solve(chol, nu))
