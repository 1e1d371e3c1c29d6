"""Growth-law definitions: closed forms, ODE right-hand sides, layouts.

Every model describes a volume trajectory v(t) anchored at v(0) = v0. The
one-dimensional family shares a single growth law built on the Box-Cox
transform of the ratio between a carrying capacity and the current volume;
pinning the transform exponent recovers the textbook logistic, von
Bertalanffy and Gompertz curves. The two-dimensional variant lets the
carrying capacity itself grow or decay exponentially. The neural kinds
replace the handwritten law with a small tanh network acting on
log-normalized volume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._kernels import BOX_COX_SERIES_THRESHOLD
from .core import (
    BlowUpError,
    DomainError,
    ModelKind,
    ModelSpec,
    ParamVector,
    ShapeMismatchError,
)
from .solver import OdeSystem, SolveConfig, integrate_kind, integrate_kind_with_sensitivities

LAMBDA_BOUNDS = (-5.0, 5.0)
GAMMA_BOUNDS = (-10.0, 10.0)

# Kernel-facing descriptors for the systems that go through the integrator.
EXPONENTIAL_ODE = OdeSystem(_kernels.KIND_EXP, dim=1, n_params=1)
BERTALANFFY_ODE = OdeSystem(_kernels.KIND_B1D, dim=1, n_params=3)
BERTALANFFY_2D_ODE = OdeSystem(_kernels.KIND_B2D, dim=2, n_params=3)
NEURAL_1D_ODE = OdeSystem(_kernels.KIND_N1D, dim=1, n_params=10)
NEURAL_2D_ODE = OdeSystem(_kernels.KIND_N2D, dim=2, n_params=12)


def box_cox(x: float, lam: float) -> float:
    """Box-Cox transform (x**lam - 1) / lam, log x at lam = 0.

    Below |lam| = 1e-5 the direct quotient is evaluated as its cubic series
    in lam, which keeps the value accurate through the lam -> 0 crossover.
    """
    x = float(x)
    lam = float(lam)
    if not x > 0.0 or not math.isfinite(x):
        raise DomainError(f"box_cox requires x > 0, got {x!r}")
    lx = math.log(x)
    if abs(lam) < BOX_COX_SERIES_THRESHOLD:
        return lx + lam * lx * lx / 2.0 + lam * lam * lx * lx * lx / 6.0
    return (math.pow(x, lam) - 1.0) / lam


def bertalanffy_solution(t: float, v0: float, v_inf: float, omega: float, lam: float) -> float:
    """Closed-form trajectory of the one-dimensional growth law.

    For lam != 0 this is (1 + ((v0/v_inf)**lam - 1) exp(-omega t))**(1/lam)
    * v_inf, evaluated through expm1/log1p so small exponents do not lose
    precision; for lam = 0 it is the classical double-exponential
    (v0/v_inf)**exp(-omega t) * v_inf. Raises BlowUpError when the lam != 0
    base is not positive (the trajectory escapes in finite time) or the
    value overflows.
    """
    t = float(t)
    v0 = float(v0)
    v_inf = float(v_inf)
    omega = float(omega)
    lam = float(lam)
    if not v0 > 0.0 or not v_inf > 0.0:
        raise DomainError("bertalanffy_solution requires v0 > 0 and v_inf > 0")
    if t == 0.0:
        return v0
    L = math.log(v0 / v_inf)
    E = math.exp(-omega * t)
    s = math.expm1(lam * L)
    base = 1.0 + s * E
    if not base > 0.0 or not math.isfinite(base):
        raise BlowUpError(
            f"trajectory base {base!r} is not positive at t={t!r} (lam={lam!r})"
        )
    if lam == 0.0:
        w = L * E
    else:
        w = math.log1p(s * E) / lam
    v = v_inf * math.exp(w)
    if not math.isfinite(v):
        raise BlowUpError(f"trajectory overflowed at t={t!r}")
    return v


def mlp_forward(layers: tuple[int, int, int], theta: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """One tanh hidden layer, linear output with bias.

    theta is laid out (W1 row-major, b1, W2 row-major, b2).
    """
    n_in, n_hidden, n_out = layers
    theta = np.asarray(theta, dtype=np.float64)
    expected = n_hidden * n_in + n_hidden + n_out * n_hidden + n_out
    if theta.shape != (expected,):
        raise ShapeMismatchError(
            f"mlp with layers {layers} needs {expected} parameters, got shape {theta.shape}"
        )
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.shape != (n_in,):
        raise ShapeMismatchError(f"mlp input must have shape ({n_in},), got {inputs.shape}")
    ofs = 0
    w1 = theta[ofs : ofs + n_hidden * n_in].reshape(n_hidden, n_in)
    ofs += n_hidden * n_in
    b1 = theta[ofs : ofs + n_hidden]
    ofs += n_hidden
    w2 = theta[ofs : ofs + n_out * n_hidden].reshape(n_out, n_hidden)
    ofs += n_out * n_hidden
    b2 = theta[ofs : ofs + n_out]
    return w2 @ np.tanh(w1 @ inputs + b1) + b2


@dataclass(frozen=True)
class ParamLayout:
    names: tuple[str, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]


def param_layout(spec: ModelSpec) -> ParamLayout:
    """Names and open box bounds for a model's parameter vector."""
    inf = math.inf
    if spec.kind is ModelKind.EXPONENTIAL:
        return ParamLayout(("v0", "omega"), (0.0, -inf), (inf, inf))
    names: list[str] = ["v0", "v_inf"]
    lower: list[float] = [0.0, 0.0]
    upper: list[float] = [inf, inf]
    if spec.kind.is_neural:
        # the network replaces the rate constant entirely
        assert spec.mlp_layers is not None
        n_in, n_hidden, n_out = spec.mlp_layers
        n_theta = n_hidden * n_in + n_hidden + n_out * n_hidden + n_out
        for i in range(n_theta):
            names.append(f"theta_{i}")
            lower.append(-inf)
            upper.append(inf)
    else:
        names.append("omega")
        lower.append(-inf)
        upper.append(inf)
        if spec.kind is ModelKind.GENERAL_BERTALANFFY:
            names.append("lam")
            lower.append(LAMBDA_BOUNDS[0])
            upper.append(LAMBDA_BOUNDS[1])
        elif spec.kind is ModelKind.BERTALANFFY_2D:
            names.extend(["lam", "gamma"])
            lower.extend([LAMBDA_BOUNDS[0], GAMMA_BOUNDS[0]])
            upper.extend([LAMBDA_BOUNDS[1], GAMMA_BOUNDS[1]])
    return ParamLayout(tuple(names), tuple(lower), tuple(upper))


def make_params(spec: ModelSpec, values) -> ParamVector:
    layout = param_layout(spec)
    values = tuple(float(v) for v in values)
    if len(values) != len(layout.names):
        raise ShapeMismatchError(
            f"{spec.kind} expects {len(layout.names)} parameters, got {len(values)}"
        )
    return ParamVector(layout.names, values, layout.lower, layout.upper)


def _values(params) -> np.ndarray:
    if isinstance(params, ParamVector):
        return params.as_array()
    return np.asarray(params, dtype=np.float64)


def _family_lambda(spec: ModelSpec, vals: np.ndarray) -> float:
    if spec.lambda_fixed is not None:
        return spec.lambda_fixed
    return float(vals[3])


def rhs(spec: ModelSpec, state, params) -> np.ndarray:
    """Reference right-hand side evaluation for any model kind.

    state is the raw ODE state for the kind (volume based for the classical
    kinds, log-normalized for the neural ones); params is the model's full
    parameter vector.
    """
    vals = _values(params)
    y = np.asarray(state, dtype=np.float64)
    if y.shape != (spec.state_dim,):
        raise ShapeMismatchError(f"{spec.kind} state must have shape ({spec.state_dim},)")
    kind = spec.kind
    if kind is ModelKind.EXPONENTIAL:
        return np.array([-vals[1] * y[0]])
    if kind is ModelKind.BERTALANFFY_2D:
        v, u = y
        if v <= 0.0 or u <= 0.0:
            raise DomainError("state components must stay positive")
        omega, lam, gamma = vals[2], vals[3], vals[4]
        return np.array([omega * box_cox(u / v, lam) * v, gamma * omega * u])
    if kind is ModelKind.NEURAL_1D:
        return mlp_forward((1, 3, 1), vals[2:], y)
    if kind is ModelKind.NEURAL_2D:
        return mlp_forward((2, 2, 2), vals[2:], y)
    # one-dimensional Box-Cox family
    v = y[0]
    if v <= 0.0:
        raise DomainError("volume must stay positive")
    v_inf, omega = vals[1], vals[2]
    lam = _family_lambda(spec, vals)
    return np.array([omega * box_cox(v_inf / v, lam) * v])


def initial_state(spec: ModelSpec, params) -> np.ndarray:
    """Raw ODE initial state for the solver-backed kinds."""
    vals = _values(params)
    kind = spec.kind
    if kind is ModelKind.BERTALANFFY_2D:
        return np.array([vals[0], vals[1]])
    if kind is ModelKind.NEURAL_1D:
        return np.array([math.log(vals[0] / vals[1])])
    if kind is ModelKind.NEURAL_2D:
        return np.array([math.log(vals[0] / vals[1]), 0.0])
    raise ValueError(f"{spec.kind} does not integrate an ODE state")


def _check_times(times: np.ndarray) -> None:
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a non-empty 1-d array")
    if np.any(np.diff(times) <= 0.0):
        raise ValueError("times must be strictly increasing")


def predict(spec: ModelSpec, params, times, config: SolveConfig | None = None) -> np.ndarray:
    """Volume trajectory at the requested times, v(0) = v0.

    Closed forms serve the exponential model and the one-dimensional family;
    the remaining kinds integrate their ODE with RK4. Raises BlowUpError or
    DivergedError when the trajectory cannot be evaluated.
    """
    vals = _values(params)
    times = np.asarray(times, dtype=np.float64)
    _check_times(times)
    kind = spec.kind
    if kind is ModelKind.EXPONENTIAL:
        with np.errstate(over="ignore"):
            v = vals[0] * np.exp(-vals[1] * times)
        if not np.all(np.isfinite(v)):
            raise BlowUpError("exponential trajectory overflowed")
        return v
    if not kind.solver_backed:
        lam = _family_lambda(spec, vals)
        return np.array(
            [bertalanffy_solution(t, vals[0], vals[1], vals[2], lam) for t in times]
        )
    if times[0] < 0.0:
        raise ValueError("solver-backed models integrate forward from t = 0")
    config = config or SolveConfig()
    system, kernel_params = _kernel_system(spec, vals)
    states = integrate_kind(system, initial_state(spec, vals), kernel_params, 0.0, times, config)
    return _state_to_volume(spec, vals, states)


def _kernel_system(spec: ModelSpec, vals: np.ndarray) -> tuple[OdeSystem, np.ndarray]:
    kind = spec.kind
    if kind is ModelKind.BERTALANFFY_2D:
        return BERTALANFFY_2D_ODE, vals[2:5]
    if kind is ModelKind.NEURAL_1D:
        return NEURAL_1D_ODE, vals[2:12]
    if kind is ModelKind.NEURAL_2D:
        return NEURAL_2D_ODE, vals[2:14]
    raise ValueError(f"{spec.kind} has no kernel ODE system")


def _state_to_volume(spec: ModelSpec, vals: np.ndarray, states: np.ndarray) -> np.ndarray:
    if spec.kind is ModelKind.BERTALANFFY_2D:
        return states[:, 0].copy()
    with np.errstate(over="ignore"):
        v = vals[1] * np.exp(states[:, 0])
    if not np.all(np.isfinite(v)):
        raise BlowUpError("log-volume state overflowed the volume map")
    return v


def predict_with_gradients(
    spec: ModelSpec, params, times, config: SolveConfig | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Trajectory plus its exact Jacobian with respect to every parameter.

    Returns (v, J) with J[i, k] = d v(times[i]) / d params[k]. Closed-form
    kinds differentiate the analytic solution; solver-backed kinds reverse
    accumulate through the RK4 step sequence and chain initial-state and
    output-map derivatives back to v0 and v_inf.
    """
    vals = _values(params)
    times = np.asarray(times, dtype=np.float64)
    _check_times(times)
    n = times.size
    kind = spec.kind
    if kind is ModelKind.EXPONENTIAL:
        v = np.empty(n)
        jac = np.empty((n, 2))
        if not _kernels.exponential_batch_grad(times, vals[0], vals[1], v, jac):
            raise BlowUpError("exponential trajectory overflowed")
        return v, jac
    if not kind.solver_backed:
        lam = _family_lambda(spec, vals)
        v = np.empty(n)
        jac4 = np.empty((n, 4))
        if not _kernels.bertalanffy_batch_grad(times, vals[0], vals[1], vals[2], lam, v, jac4):
            raise BlowUpError("closed-form trajectory left its domain")
        if spec.lambda_fixed is None:
            return v, jac4
        return v, jac4[:, :3].copy()
    if times[0] < 0.0:
        raise ValueError("solver-backed models integrate forward from t = 0")
    config = config or SolveConfig()
    system, kernel_params = _kernel_system(spec, vals)
    y0 = initial_state(spec, vals)
    states, g_params, g_y0 = integrate_kind_with_sensitivities(
        system, y0, kernel_params, 0.0, times, config
    )
    v0, v_inf = vals[0], vals[1]
    n_total = vals.size
    jac = np.zeros((n, n_total))
    if kind is ModelKind.BERTALANFFY_2D:
        v = states[:, 0].copy()
        # state0 = (v0, v_inf): volume sensitivity to both comes straight
        # from the initial-state sweep; ODE params occupy columns 2..4
        jac[:, 0] = g_y0[:, 0, 0]
        jac[:, 1] = g_y0[:, 0, 1]
        jac[:, 2:5] = g_params[:, 0, :]
        return v, jac
    y = states[:, 0]
    with np.errstate(over="ignore"):
        v = v_inf * np.exp(y)
    if not np.all(np.isfinite(v)):
        raise BlowUpError("log-volume state overflowed the volume map")
    # y(0) = log(v0/v_inf), v(t) = v_inf exp(y(t))
    dy_dy0 = g_y0[:, 0, 0]
    jac[:, 0] = v * dy_dy0 / v0
    jac[:, 1] = np.exp(y) - v * dy_dy0 / v_inf
    jac[:, 2:] = v[:, None] * g_params[:, 0, :]
    return v, jac
