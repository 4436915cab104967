"""Gated optimal assignment between tracks and detections."""
from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..metrics.regression import chi2_quantile


def gate_threshold(quantile: float = 0.95, dof: int = 4) -> float:
    return float(chi2_quantile(dof, quantile))


def hungarian(cost):
    """Minimum-cost assignment; returns (row, col) index arrays."""
    cost = np.asarray(cost, dtype=float)
    if cost.size == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    return linear_sum_assignment(cost)


def associate(cost, gate: float):
    """Hungarian assignment with gated entries forbidden.

    Entries above ``gate`` (or non-finite) are replaced by a sentinel larger
    than any admissible total, so the solver first maximizes the number of
    admissible pairs and then minimizes their cost; sentinel pairs are
    discarded.

    Returns
    -------
    pairs : list of (row, col)
    unmatched_rows, unmatched_cols : list of int
    """
    cost = np.asarray(cost, dtype=float)
    n_rows, n_cols = cost.shape if cost.ndim == 2 else (0, 0)
    allowed = np.isfinite(cost) & (cost <= gate)
    pairs = []
    if allowed.any():
        sentinel = 1.0 + 2.0 * np.sum(np.abs(cost[allowed])) + 1.0e6
        rows, cols = hungarian(np.where(allowed, cost, sentinel))
        pairs = [(int(r), int(c)) for r, c in zip(rows, cols) if allowed[r, c]]
    used_r = {r for r, _ in pairs}
    used_c = {c for _, c in pairs}
    return (pairs, [r for r in range(n_rows) if r not in used_r],
            [c for c in range(n_cols) if c not in used_c])
