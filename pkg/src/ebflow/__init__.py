"""Empirical Bayes linear regression with a grid prior.

The prior is learned jointly with Langevin posterior samples (``fit_ebflow``);
CAVI, Gibbs-MCEM and Langevin-MCEM are provided for comparison.
"""

__version__ = "0.1.0"

from .errors import ConfigError, EBFlowError, NonPositiveSigma, NumericalFailure
from .model import GridPrior, LinearModel, build_reparam
from .flow import StepSchedule, fit_ebflow
from .penalty import SplinePenalty

__all__ = [
    "ConfigError", "EBFlowError", "NonPositiveSigma", "NumericalFailure",
    "GridPrior", "LinearModel", "build_reparam", "StepSchedule", "fit_ebflow",
    "SplinePenalty", "__version__",
]
