"""Sufficient-statistics laboratory for one-pass SGD on shallow quadratic networks."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DegenerateDiffusionError,
    DivergenceError,
    IllConditionedInitError,
    IntegrationBlowupError,
    InternalConsistencyError,
    MedlabError,
    NoCrossingError,
    PrecisionError,
    StateInvalidError,
    StepRejectedError,
    UnstableRateError,
    UnsupportedConfigurationError,
    UnsupportedOrderError,
)
from .moments import (
    OmegaMatrix,
    displacement_moment,
    sixth_moment_closed,
    wick_moment,
)
from .state import OverlapState, TaskParams, Trajectory
from .dynamics_ode import drift, init_overlaps, integrate, population_risk
from .dynamics_sde import diffusion_covariance, integrate_sde, sde_ensemble_p1
from .sgd_sim import (
    init_network,
    make_teacher,
    measure_overlaps,
    run_sgd,
    sgd_ensemble,
)
from .exit_times import (
    ExitTimeQuery,
    annealed_exit_time_p1,
    exit_time_general_p,
    exit_time_numeric,
    gamma_opt,
    hyp2f2,
    linearized_excess_risk,
    linearized_rates,
    min_steps_and_gain,
    ou_mean_exit_time_mc,
    quenched_exit_time_p1,
    sample_Pdp,
    sde_exit_time_p1,
)
from .landscape import classify_critical_points, critical_point_report
from .experiments import (
    ExperimentConfig,
    max_correlation_diagnostic,
    run_experiment,
    run_selftest,
)

__all__ = [
    "ConfigError",
    "DegenerateDiffusionError",
    "DivergenceError",
    "ExitTimeQuery",
    "ExperimentConfig",
    "IllConditionedInitError",
    "IntegrationBlowupError",
    "InternalConsistencyError",
    "MedlabError",
    "NoCrossingError",
    "OmegaMatrix",
    "OverlapState",
    "PrecisionError",
    "StateInvalidError",
    "StepRejectedError",
    "TaskParams",
    "Trajectory",
    "UnstableRateError",
    "UnsupportedConfigurationError",
    "UnsupportedOrderError",
    "annealed_exit_time_p1",
    "classify_critical_points",
    "critical_point_report",
    "diffusion_covariance",
    "displacement_moment",
    "drift",
    "exit_time_general_p",
    "exit_time_numeric",
    "gamma_opt",
    "hyp2f2",
    "init_network",
    "init_overlaps",
    "integrate",
    "integrate_sde",
    "linearized_excess_risk",
    "linearized_rates",
    "make_teacher",
    "max_correlation_diagnostic",
    "measure_overlaps",
    "min_steps_and_gain",
    "ou_mean_exit_time_mc",
    "population_risk",
    "quenched_exit_time_p1",
    "run_experiment",
    "run_sgd",
    "run_selftest",
    "sample_Pdp",
    "sde_exit_time_p1",
    "sde_ensemble_p1",
    "sgd_ensemble",
    "sixth_moment_closed",
    "wick_moment",
]
