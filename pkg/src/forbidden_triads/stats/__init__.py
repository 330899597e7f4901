"""Estimation and inference engines."""

from .design import (
    CONST,
    ConvergenceError,
    DesignMatrix,
    EstimationError,
    FitResult,
    RankDeficiencyError,
    SeparationError,
)
from .glm import fe_negbin_fit, hhg_loglike, logit_fit, logit_predict, nb2_loglike, negbin_fit, poisson_fit
from .inference import (
    KSResult,
    PermutationResult,
    WilcoxonResult,
    ks_two_sample,
    matched_closure_sample,
    permutation_pvalues,
    wilcoxon_signed_rank,
)
from .linear import RankWarning, fe_ols_fit, ols_fit, pearson_matrix, power_sequence_r2, vif
from .margins import Margins, leader_interaction_fit, marginal_predictions, quadratic_peak
from .smooth import KDE, kde_epanechnikov, lowess, normal_scale_bandwidth

FITTERS = {
    "ols": ols_fit,
    "fe_ols": fe_ols_fit,
    "nb": negbin_fit,
    "fe_nb": fe_negbin_fit,
    "logit": logit_fit,
    "poisson": poisson_fit,
}

__all__ = [
    "CONST", "ConvergenceError", "DesignMatrix", "EstimationError", "FitResult",
    "RankDeficiencyError", "SeparationError", "fe_negbin_fit", "hhg_loglike", "logit_fit",
    "logit_predict", "nb2_loglike", "negbin_fit", "poisson_fit", "KSResult",
    "PermutationResult", "WilcoxonResult", "ks_two_sample", "matched_closure_sample",
    "permutation_pvalues", "wilcoxon_signed_rank", "RankWarning", "fe_ols_fit", "ols_fit",
    "pearson_matrix", "power_sequence_r2", "vif", "Margins", "leader_interaction_fit",
    "marginal_predictions", "quadratic_peak", "KDE", "kde_epanechnikov", "lowess",
    "normal_scale_bandwidth", "FITTERS",
]
