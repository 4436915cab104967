"""Confidence and regression-uncertainty calibrators."""
from .base import ConfidenceCalibrator, model_from_dict
from .bayesian import BayesianCalibration, hpdi
from .binning import HistogramBinning
from .distributions import (CauchyDistribution, GaussianDistribution, NonParametricDistribution,
                            moment_match)
from .regression import (CovarianceEstimation, GPBeta, GPCauchy, GPNormal, IsotonicRecalibration,
                         RegressionCalibrator, VarianceScaling, pav)
from .scaling import BetaCalibration, LogisticCalibration

__all__ = ["ConfidenceCalibrator", "model_from_dict", "BayesianCalibration", "hpdi", "HistogramBinning",
           "CauchyDistribution", "GaussianDistribution", "NonParametricDistribution", "moment_match",
           "CovarianceEstimation", "GPBeta", "GPCauchy", "GPNormal", "IsotonicRecalibration",
           "RegressionCalibrator", "VarianceScaling", "pav", "BetaCalibration", "LogisticCalibration"]
