from .confidence import (BinningScheme, ReliabilityBin, auprc, brier, dece, dece_from_reliability, ece,
                         mce, nll_bernoulli, precision_recall_curve, reliability, write_reliability_csv)
from .regression import (TAU_GRID, c_qce, chi2_quantile, ence, gaussian_nll_terms, gaussian_quantile,
                         interval_mpiw, interval_picp, m_qce, mean_c_qce, mean_m_qce, mean_pinball, nees,
                         nll_cauchy_per_dim, nll_gaussian, nll_gaussian_per_dim, pinball, sgv, uce)

__all__ = [
    "BinningScheme", "ReliabilityBin", "auprc", "brier", "dece", "dece_from_reliability", "ece", "mce",
    "nll_bernoulli", "precision_recall_curve", "reliability", "write_reliability_csv",
    "TAU_GRID", "c_qce", "chi2_quantile", "ence", "gaussian_nll_terms", "gaussian_quantile",
    "interval_mpiw", "interval_picp", "m_qce", "mean_c_qce", "mean_m_qce", "mean_pinball", "nees",
    "nll_cauchy_per_dim", "nll_gaussian", "nll_gaussian_per_dim", "pinball", "sgv", "uce",
]
