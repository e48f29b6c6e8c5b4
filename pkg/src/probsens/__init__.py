"""Probabilistic sensitivity analysis with respect to input distribution parameters."""
from .analytic import delta_limit_check, freq_sensitivity
from .dist import DeltaApprox, Gamma, Gaussian, InputModel
from .eig import build_r, reparameterize, second_moment, solve_generalized, solve_standard, summary_index
from .errors import ConfigError, NumericalError, SensitivityError
from .estimator import FailureProb, Moment, estimate_utility, run_batch
from .fisher import KdeConfig, fisher_matrix, kl_quadratic

__all__ = [
    "ConfigError", "DeltaApprox", "FailureProb", "Gamma", "Gaussian", "InputModel", "KdeConfig",
    "Moment", "NumericalError", "SensitivityError", "build_r", "delta_limit_check",
    "estimate_utility", "fisher_matrix", "freq_sensitivity", "kl_quadratic", "reparameterize",
    "run_batch", "second_moment", "solve_generalized", "solve_standard", "summary_index",
]
__version__ = "0.1.0"
