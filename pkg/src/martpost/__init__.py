"""Martingale posteriors with recursive Gaussian-copula predictives."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .config import CopulaConfig, InitialDensity
from .density import (
    FitState,
    eval_cdf,
    eval_cdf_conditionals,
    eval_density,
    fit_multivariate,
    fit_univariate,
    prequential_loglik,
    prior_state,
)
from .regression import (
    eval_class_prob,
    eval_conditional_cdf,
    eval_conditional_density,
    fit_classifier,
    fit_conditional_regression,
    fit_joint_regression,
    fit_regression,
)
from .resampling import (
    GridState,
    PosteriorEnsemble,
    ResampleConfig,
    concentration_check,
    extract_statistics,
    inverse_cdf_sample,
    l1_trace,
    resample_classifier,
    resample_multivariate,
    resample_regression,
    resample_univariate,
)
from .special import AlphaSchedule, alpha

__all__ = [
    "AlphaSchedule",
    "CopulaConfig",
    "FitState",
    "GridState",
    "InitialDensity",
    "PosteriorEnsemble",
    "ResampleConfig",
    "alpha",
    "concentration_check",
    "eval_cdf",
    "eval_cdf_conditionals",
    "eval_class_prob",
    "eval_conditional_cdf",
    "eval_conditional_density",
    "eval_density",
    "extract_statistics",
    "fit_classifier",
    "fit_conditional_regression",
    "fit_joint_regression",
    "fit_multivariate",
    "fit_regression",
    "fit_univariate",
    "inverse_cdf_sample",
    "l1_trace",
    "prequential_loglik",
    "prior_state",
    "resample_classifier",
    "resample_multivariate",
    "resample_regression",
    "resample_univariate",
]
