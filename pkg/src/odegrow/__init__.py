"""Calibrate tumor growth models to time-volume series and compare them.

The package fits a family of classical ordinary-differential-equation
growth models and two small neural ODE variants to per-lesion volume
measurements with an exact-gradient Adam loop, scores each calibrated
model on held-out late measurements, and ranks models across a cohort
with bootstrap confidence intervals on paired error differences.
"""

from .calibrate import (
    CalibrationConfig,
    bounded_step,
    fit,
    initialize,
    loss,
    loss_and_gradient,
    penalty_factor,
)
from .core import (
    BlowUpError,
    DivergedError,
    DomainError,
    EmptyInputError,
    FitResult,
    FitStatus,
    LengthMismatchError,
    Lesion,
    ModelKind,
    ModelSpec,
    NonMonotoneTimesError,
    NonPositiveVolumeError,
    NoUsableLesionsError,
    OdegrowError,
    ParamVector,
    ParseError,
    ShapeMismatchError,
    TooFewMeasurementsError,
    ValidationError,
    validate_lesion,
)
from .data import SynthConfig, generate_cohort, load_cohort, write_cohort, write_truth
from .evaluate import (
    BattleReport,
    BootstrapConfig,
    MatchResult,
    battle,
    bootstrap_ci,
    holdout_mae,
    matchups_csv,
    per_lesion_errors_csv,
    ranking_csv,
    split_holdout,
)
from .models import (
    bertalanffy_solution,
    box_cox,
    initial_state,
    make_params,
    mlp_forward,
    param_layout,
    predict,
    predict_with_gradients,
    rhs,
)
from .solver import OdeSystem, SolveConfig, build_grid, integrate

__version__ = "0.1.0"

__all__ = [
    "BattleReport",
    "BlowUpError",
    "BootstrapConfig",
    "CalibrationConfig",
    "DivergedError",
    "DomainError",
    "EmptyInputError",
    "FitResult",
    "FitStatus",
    "LengthMismatchError",
    "Lesion",
    "MatchResult",
    "ModelKind",
    "ModelSpec",
    "NonMonotoneTimesError",
    "NonPositiveVolumeError",
    "NoUsableLesionsError",
    "OdeSystem",
    "OdegrowError",
    "ParamVector",
    "ParseError",
    "ShapeMismatchError",
    "SolveConfig",
    "SynthConfig",
    "TooFewMeasurementsError",
    "ValidationError",
    "battle",
    "bertalanffy_solution",
    "bootstrap_ci",
    "bounded_step",
    "box_cox",
    "build_grid",
    "fit",
    "generate_cohort",
    "holdout_mae",
    "initial_state",
    "initialize",
    "integrate",
    "load_cohort",
    "loss",
    "loss_and_gradient",
    "make_params",
    "matchups_csv",
    "mlp_forward",
    "param_layout",
    "penalty_factor",
    "per_lesion_errors_csv",
    "predict",
    "predict_with_gradients",
    "ranking_csv",
    "rhs",
    "split_holdout",
    "validate_lesion",
    "write_cohort",
    "write_truth",
    "__version__",
]
