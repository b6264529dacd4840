"""Simulation and composite-likelihood inference for the Gaussian
extreme value (Smith) max-stable process.

Core workflow: simulate or load a spatial panel of block maxima, fit by
maximum pairwise composite likelihood with sandwich (Godambe)
uncertainty, compare models with CLIC and adjusted composite likelihood
ratio tests, and predict extremal coefficients and return levels.
"""

__version__ = "1.0.0"

from .estimator import SmithMaxStable
from .gev import GevParams, fit_gev_univariate, gev_return_level
from .inference import (
    ClrtResult,
    FitOptions,
    FitResult,
    NonConvergence,
    clic,
    clrt,
    fit,
    weighted_chisq_pvalue,
)
from .likelihood import (
    DataError,
    DataSet,
    ModelSpec,
    PairwiseProblem,
    pairwise_gradient,
    pairwise_nll,
)
from .simulate import (
    SimConfig,
    StudyResult,
    naive_theta,
    replication_study,
    simulate_panel,
    simulate_smith_field,
)
from .smith import (
    CovMatrix,
    bivariate_cdf,
    bivariate_log_density,
    conditional_return_level,
    extremal_coefficient,
    inverse_extremal_coefficient,
    mahalanobis_a,
)

__all__ = [
    "__version__",
    "SmithMaxStable",
    "GevParams", "fit_gev_univariate", "gev_return_level",
    "ClrtResult", "FitOptions", "FitResult", "NonConvergence",
    "clic", "clrt", "fit", "weighted_chisq_pvalue",
    "DataError", "DataSet", "ModelSpec", "PairwiseProblem",
    "pairwise_gradient", "pairwise_nll",
    "SimConfig", "StudyResult", "naive_theta", "replication_study",
    "simulate_panel", "simulate_smith_field",
    "CovMatrix", "bivariate_cdf", "bivariate_log_density",
    "conditional_return_level", "extremal_coefficient",
    "inverse_extremal_coefficient", "mahalanobis_a",
]
