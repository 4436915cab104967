"""Discrete Bayes filter over a track's existence (does it match a real object)."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ExistenceConfig:
    """Existence-filter settings.

    Parameters
    ----------
    p_survive : float
        ``P(m_t = 1 | m_{t-1} = 1)``.
    p_birth : float
        ``P(m_t = 1 | m_{t-1} = 0)``.
    precision_prior : float
        Prior precision ``pi = P(m = 1)`` of the detector; a detection whose
        calibrated confidence equals it carries no evidence.
    drop_threshold, report_threshold : float
        Tracks below the first are deleted; tracks at or above the second are reported.
    gate_quantile : float
        Chi-square quantile of the association gate.
    """

    p_survive: float = 0.85
    p_birth: float = 0.02
    precision_prior: float = 0.5
    drop_threshold: float = 0.3
    report_threshold: float = 0.5
    gate_quantile: float = 0.95

    def __post_init__(self):
        for name in ("p_survive", "p_birth", "drop_threshold", "report_threshold", "gate_quantile"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0.0 < self.precision_prior < 1.0:
            raise ValueError("precision_prior must lie strictly between 0 and 1")


def existence_predict(p: float, config: ExistenceConfig) -> float:
    """Markov-chain propagation of the existence probability."""
    return config.p_survive * p + config.p_birth * (1.0 - p)


def existence_update(p_pred: float, q: float, config: ExistenceConfig) -> float:
    """Posterior existence given a detection with calibrated confidence ``q``.

    The detector's prior precision is divided out so that ``q == pi`` leaves
    the prediction unchanged.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError("confidence must lie in [0, 1]")
    pi = config.precision_prior
    pos = q / pi * p_pred
    neg = (1.0 - q) / (1.0 - pi) * (1.0 - p_pred)
    if pos + neg == 0.0:
        return p_pred
    return pos / (pos + neg)
