"""Order selection and nonparametric parameter estimation for HMMs on [0, 1]."""

from .basis import TrigBasis, coefficient_matrix, gauss_legendre_rule, project_density
from .density import CandidateModel, ContrastEvaluation, gamma_n, norm_sq
from .estimators import PenalizedLSHMM, SpectralOrderHMM
from .hmm import (
    BasisCoefficients,
    BetaDensity,
    HmmParams,
    ObservationRecord,
    d_perm,
    simulate,
    stationary_distribution,
)
from .least_squares import (
    ModelGrid,
    calibrate_dimension_jump,
    calibrate_slope,
    duplicate_state,
    merge_states,
    pen_shape,
    polish_grid,
    run_grid,
    select_model,
)
from .presets import make_preset
from .spectral import (
    compute_moments,
    order_by_regression,
    order_by_threshold,
    project_simplex,
    project_transition,
    spectral_params,
    theoretical_N,
)

__all__ = [
    "BasisCoefficients",
    "BetaDensity",
    "CandidateModel",
    "ContrastEvaluation",
    "HmmParams",
    "ModelGrid",
    "ObservationRecord",
    "PenalizedLSHMM",
    "SpectralOrderHMM",
    "TrigBasis",
    "calibrate_dimension_jump",
    "calibrate_slope",
    "coefficient_matrix",
    "compute_moments",
    "d_perm",
    "duplicate_state",
    "gamma_n",
    "gauss_legendre_rule",
    "make_preset",
    "merge_states",
    "norm_sq",
    "order_by_regression",
    "order_by_threshold",
    "pen_shape",
    "polish_grid",
    "project_density",
    "project_simplex",
    "project_transition",
    "run_grid",
    "select_model",
    "simulate",
    "spectral_params",
    "stationary_distribution",
    "theoretical_N",
]
