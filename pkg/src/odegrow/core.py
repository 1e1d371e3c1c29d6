"""Shared domain types and exceptions.

This module holds the vocabulary the rest of the package speaks: lesion
time series, model identities, parameter vectors with box constraints, and
fit results. It deliberately contains no numerics.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class OdegrowError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(OdegrowError, ValueError):
    """Input data violates a structural requirement."""


class NonMonotoneTimesError(ValidationError):
    """Measurement times are not strictly increasing."""

    def __init__(self, index: int, message: str | None = None):
        self.index = index
        super().__init__(message or f"times must be strictly increasing (offending index {index})")


class NonPositiveVolumeError(ValidationError):
    """A measured volume is zero, negative, or not finite."""

    def __init__(self, index: int, message: str | None = None):
        self.index = index
        super().__init__(message or f"volumes must be positive and finite (offending index {index})")


class LengthMismatchError(ValidationError):
    """Paired arrays have different lengths."""


class DomainError(OdegrowError, ValueError):
    """A mathematical function was evaluated outside its domain."""


class BlowUpError(OdegrowError, ArithmeticError):
    """A closed-form trajectory leaves its domain of validity in finite time."""


class DivergedError(OdegrowError, ArithmeticError):
    """Numerical integration produced a non-finite or runaway state."""


class ShapeMismatchError(OdegrowError, ValueError):
    """A parameter vector does not match the expected layout."""


class TooFewMeasurementsError(OdegrowError, ValueError):
    """A lesion has too few measurements for the requested operation."""


class EmptyInputError(OdegrowError, ValueError):
    """An operation received an empty collection it cannot act on."""


class NoUsableLesionsError(OdegrowError, RuntimeError):
    """Every lesion in a cohort was rejected or discarded."""


class ParseError(OdegrowError, ValueError):
    """A data file could not be parsed."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class ModelKind(str, enum.Enum):
    """The eight growth-model identities the package can calibrate."""

    EXPONENTIAL = "exponential"
    LOGISTIC = "logistic"
    CLASSICAL_BERTALANFFY = "classical_bertalanffy"
    CLASSICAL_GOMPERTZ = "classical_gompertz"
    GENERAL_BERTALANFFY = "general_bertalanffy"
    BERTALANFFY_2D = "bertalanffy_2d"
    NEURAL_1D = "neural_1d"
    NEURAL_2D = "neural_2d"

    def __str__(self) -> str:  # argparse help and reports read better this way
        return self.value

    @property
    def is_neural(self) -> bool:
        return self in (ModelKind.NEURAL_1D, ModelKind.NEURAL_2D)

    @property
    def solver_backed(self) -> bool:
        """True when prediction requires numerical integration."""
        return self in (ModelKind.BERTALANFFY_2D, ModelKind.NEURAL_1D, ModelKind.NEURAL_2D)


def _mlp_param_count(layers: tuple[int, int, int]) -> int:
    n_in, n_hidden, n_out = layers
    return n_hidden * n_in + n_hidden + n_out * n_hidden + n_out


@dataclass(frozen=True)
class ModelSpec:
    """Structural description of one model: identity plus fixed choices.

    lambda_fixed pins the shape exponent for the named specializations and is
    None when the exponent is a free parameter. mlp_layers is set only for the
    neural kinds.
    """

    kind: ModelKind
    lambda_fixed: float | None = None
    mlp_layers: tuple[int, int, int] | None = None

    @staticmethod
    def for_kind(kind: ModelKind) -> "ModelSpec":
        kind = ModelKind(kind)
        if kind is ModelKind.LOGISTIC:
            return ModelSpec(kind, lambda_fixed=-1.0)
        if kind is ModelKind.CLASSICAL_BERTALANFFY:
            return ModelSpec(kind, lambda_fixed=1.0 / 3.0)
        if kind is ModelKind.CLASSICAL_GOMPERTZ:
            return ModelSpec(kind, lambda_fixed=0.0)
        if kind is ModelKind.NEURAL_1D:
            return ModelSpec(kind, mlp_layers=(1, 3, 1))
        if kind is ModelKind.NEURAL_2D:
            return ModelSpec(kind, mlp_layers=(2, 2, 2))
        return ModelSpec(kind)

    @property
    def param_count(self) -> int:
        if self.kind is ModelKind.EXPONENTIAL:
            return 2
        if self.kind is ModelKind.BERTALANFFY_2D:
            return 5
        if self.kind.is_neural:
            assert self.mlp_layers is not None
            return 2 + _mlp_param_count(self.mlp_layers)
        # one-dimensional Box-Cox family: v0, v_inf, omega, plus lambda if free
        return 3 + (1 if self.lambda_fixed is None else 0)

    @property
    def state_dim(self) -> int:
        return 2 if self.kind in (ModelKind.BERTALANFFY_2D, ModelKind.NEURAL_2D) else 1


@dataclass(frozen=True)
class ParamVector:
    """Named parameter values with per-coordinate open box constraints."""

    names: tuple[str, ...]
    values: tuple[float, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self) -> None:
        n = len(self.names)
        if not (len(self.values) == len(self.lower) == len(self.upper) == n):
            raise LengthMismatchError(
                f"names/values/lower/upper lengths differ: "
                f"{n}/{len(self.values)}/{len(self.lower)}/{len(self.upper)}"
            )
        for i in range(n):
            if not self.lower[i] < self.upper[i]:
                raise ValidationError(
                    f"lower bound must be below upper bound for {self.names[i]!r}"
                )
            v = self.values[i]
            if not math.isfinite(v):
                raise ValidationError(f"non-finite value for {self.names[i]!r}")
            if not (self.lower[i] < v < self.upper[i]):
                raise ValidationError(
                    f"value {v!r} for {self.names[i]!r} outside open interval "
                    f"({self.lower[i]!r}, {self.upper[i]!r})"
                )

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    def with_values(self, values: Iterable[float]) -> "ParamVector":
        return ParamVector(self.names, tuple(float(v) for v in values), self.lower, self.upper)

    def __getitem__(self, name: str) -> float:
        try:
            return self.values[self.names.index(name)]
        except ValueError:
            raise KeyError(name) from None


@dataclass(frozen=True)
class Lesion:
    """One lesion's measured time series. Immutable once constructed."""

    id: str
    times: tuple[float, ...]
    volumes: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.id:
            raise ValidationError("lesion id must be non-empty")
        if len(self.times) != len(self.volumes):
            raise LengthMismatchError(
                f"lesion {self.id!r}: {len(self.times)} times vs {len(self.volumes)} volumes"
            )
        if len(self.times) < 2:
            raise TooFewMeasurementsError(f"lesion {self.id!r}: need at least 2 measurements")
        for i, t in enumerate(self.times):
            if not math.isfinite(t):
                raise ValidationError(f"lesion {self.id!r}: non-finite time at index {i}")
            if i > 0 and t <= self.times[i - 1]:
                raise NonMonotoneTimesError(
                    i, f"lesion {self.id!r}: times must be strictly increasing (index {i})"
                )
        for i, v in enumerate(self.volumes):
            if not math.isfinite(v) or v <= 0.0:
                raise NonPositiveVolumeError(
                    i, f"lesion {self.id!r}: volume at index {i} must be positive and finite"
                )

    @property
    def n_points(self) -> int:
        return len(self.times)

    def times_array(self) -> np.ndarray:
        return np.asarray(self.times, dtype=np.float64)

    def volumes_array(self) -> np.ndarray:
        return np.asarray(self.volumes, dtype=np.float64)


def validate_lesion(lesion_id: str, times: Sequence[float], volumes: Sequence[float]) -> Lesion:
    """Build a Lesion, raising a specific error naming the offending index."""
    return Lesion(str(lesion_id), tuple(float(t) for t in times), tuple(float(v) for v in volumes))


class FitStatus(str, enum.Enum):
    CONVERGED = "Converged"
    EARLY_STOPPED = "EarlyStopped"
    DIVERGED = "Diverged"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class FitResult:
    """Outcome of one calibration run.

    params holds the best-loss iterate, not the last one. loss equals
    min(loss_trace). volume_scale is the normalization constant (maximum
    calibration volume) and time_origin the first calibration time; both are
    needed to interpret predictions in raw units.
    """

    spec: ModelSpec
    params: ParamVector
    loss: float
    loss_trace: tuple[float, ...] = field(repr=False)
    status: FitStatus
    n_iterations: int
    volume_scale: float
    time_origin: float
    holdout_times: tuple[float, ...] = ()
    holdout_predictions: tuple[float, ...] = ()
    holdout_abs_errors: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.loss_trace and not math.isnan(self.loss):
            best = min(self.loss_trace)
            if not (self.loss == best or (math.isinf(self.loss) and math.isinf(best))):
                raise ValidationError("fit loss must equal the minimum of its loss trace")
        if len(self.holdout_predictions) != len(self.holdout_abs_errors):
            raise LengthMismatchError("holdout predictions and errors must pair up")
