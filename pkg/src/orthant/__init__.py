"""Gaussian and Student orthant probabilities by GHK, particle filtering and SMC."""

from .estimators import (
    DeadSystemError,
    EstimateReport,
    ReplicateSummary,
    RunConfig,
    WeightedSample,
    combine_reports,
    ess,
    ghk,
    repeat_estimate,
    smc,
    systematic_resample,
)
from .expectations import gibbs_truncated_sampler, to_original, weighted_expectation
from .linalg import NotPositiveDefiniteError, cholesky, gibson_ordering
from .moves import MoveConfig
from .problem import (
    Ar1Spec,
    OrthantProblem,
    ProbitPanelSpec,
    gen_ar1_problem,
    gen_cauchy_problem,
    gen_probit_panel,
    gen_thurstonian,
    gen_thurstonian_observations,
)
from .student import StudentOrthantProblem, smc_student

__version__ = "0.1.0"

__all__ = [
    "Ar1Spec",
    "DeadSystemError",
    "EstimateReport",
    "MoveConfig",
    "NotPositiveDefiniteError",
    "OrthantProblem",
    "ProbitPanelSpec",
    "ReplicateSummary",
    "RunConfig",
    "StudentOrthantProblem",
    "WeightedSample",
    "cholesky",
    "combine_reports",
    "ess",
    "gen_ar1_problem",
    "gen_cauchy_problem",
    "gen_probit_panel",
    "gen_thurstonian",
    "gen_thurstonian_observations",
    "ghk",
    "gibbs_truncated_sampler",
    "gibson_ordering",
    "repeat_estimate",
    "smc",
    "smc_student",
    "systematic_resample",
    "to_original",
    "weighted_expectation",
]
