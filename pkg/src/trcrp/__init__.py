"""Temporally-reweighted CRP mixtures for multivariate time series.

Posterior inference by collapsed MCMC and particle-learning SMC; predictive
operations for forecasting, imputation, and dependence-structure discovery.
"""

from .conjugate import NigHyper, NigStats, StudentT
from .panel import LagVector, PanelError, TimeSeriesPanel, lag_vector, load_csv, write_csv

__version__ = "0.1.0"

__all__ = [
    "NigHyper",
    "NigStats",
    "StudentT",
    "TimeSeriesPanel",
    "LagVector",
    "PanelError",
    "load_csv",
    "write_csv",
    "lag_vector",
    "__version__",
]
