"""Gradient calibration of growth models to lesion time series.

The objective is a penalized sum of squared residuals on volumes
normalized by the lesion's largest calibration measurement. Optimization is
plain Adam with analytic gradients; proposals that leave a parameter's open
box are replaced by the midpoint between the current value and the violated
bound, so iterates never touch a boundary. The returned parameters are
always the best iterate observed, not the last one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import models
from .core import (
    BlowUpError,
    DivergedError,
    FitResult,
    FitStatus,
    Lesion,
    ModelKind,
    ModelSpec,
    ParamVector,
)
from .solver import SolveConfig

# Iterations the loss may stay non-finite from the very first step before
# the fit is abandoned as diverged.
_NONFINITE_STARTUP_LIMIT = 50


@dataclass(frozen=True)
class CalibrationConfig:
    """Adam and stopping controls.

    learning_rate and penalty_kappa default to None, which resolves to the
    per-family defaults: 1e-3 / 0.3 for the neural kinds and 1e-2 / 0.8 for
    everything else.
    """

    learning_rate: float | None = None
    max_iters: int = 20000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    penalty_kappa: float | None = None
    early_stop_patience: int = 500
    early_stop_rel_tol: float = 1e-9
    seed: int = 0

    def resolved_learning_rate(self, spec: ModelSpec) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return 1e-3 if spec.kind.is_neural else 1e-2

    def resolved_kappa(self, spec: ModelSpec) -> float:
        if self.penalty_kappa is not None:
            return self.penalty_kappa
        return 0.3 if spec.kind.is_neural else 0.8


def penalty_factor(v0: float, v_inf: float, kappa: float) -> float:
    """((v0^2 + v_inf^2) / (2 v0 v_inf)) ** kappa.

    Equals 1 when v0 == v_inf and grows as the two move apart, discouraging
    fits that push the capacity far away from the data just to flatten the
    residuals.
    """
    q = (v0 * v0 + v_inf * v_inf) / (2.0 * v0 * v_inf)
    return math.pow(q, kappa)


def bounded_step(value: float, proposed: float, lower: float, upper: float) -> float:
    """Accept the proposal if strictly inside (lower, upper), otherwise move
    halfway from the current value toward the violated bound.

    When the midpoint itself rounds onto the bound (value already within one
    ulp of it, or the bound is infinite) the step is refused and the current
    value kept, so iterates never touch the bounds exactly.
    """
    if lower < proposed < upper:
        return proposed
    half = 0.5 * (value + lower) if proposed <= lower else 0.5 * (value + upper)
    if lower < half < upper:
        return half
    return value


def initialize(spec: ModelSpec, lesion: Lesion, seed: int = 0) -> ParamVector:
    """Data-driven starting point.

    v0 starts at the first calibration volume, v_inf at the last (nudged 1%
    away when they coincide), and omega, where the model has one, at the
    reciprocal calibration span. A free lam starts at 1/3, gamma at 0.
    Network weights draw uniformly from (-0.1, 0.1) with the given seed;
    biases start at 0.
    """
    v_first = lesion.volumes[0]
    v_last = lesion.volumes[-1]
    span = lesion.times[-1] - lesion.times[0]
    omega = 1.0 / span
    kind = spec.kind
    if kind is ModelKind.EXPONENTIAL:
        return models.make_params(spec, (v_first, omega))
    v_inf = v_last if v_last != v_first else 1.01 * v_first
    if kind.is_neural:
        assert spec.mlp_layers is not None
        n_in, n_hidden, n_out = spec.mlp_layers
        rng = np.random.default_rng(seed)
        values: list[float] = [v_first, v_inf]
        values.extend(rng.uniform(-0.1, 0.1, size=n_hidden * n_in))
        values.extend([0.0] * n_hidden)
        values.extend(rng.uniform(-0.1, 0.1, size=n_out * n_hidden))
        values.extend([0.0] * n_out)
        return models.make_params(spec, values)
    values = [v_first, v_inf, omega]
    if kind is ModelKind.GENERAL_BERTALANFFY:
        values.append(1.0 / 3.0)
    elif kind is ModelKind.BERTALANFFY_2D:
        values.extend([1.0 / 3.0, 0.0])
    return models.make_params(spec, values)


def _penalty_and_grad(
    spec: ModelSpec, vals: np.ndarray, kappa: float
) -> tuple[float, float, float]:
    """Penalty value and its partials in (v0, v_inf). Exponential gets 1."""
    if spec.kind is ModelKind.EXPONENTIAL:
        return 1.0, 0.0, 0.0
    v0, v_inf = vals[0], vals[1]
    q = (v0 * v0 + v_inf * v_inf) / (2.0 * v0 * v_inf)
    pen = math.pow(q, kappa)
    if q == 1.0:
        return pen, 0.0, 0.0
    scale = kappa * math.pow(q, kappa - 1.0)
    dq_dv0 = (v0 * v0 - v_inf * v_inf) / (2.0 * v0 * v0 * v_inf)
    dq_dvinf = (v_inf * v_inf - v0 * v0) / (2.0 * v_inf * v_inf * v0)
    return pen, scale * dq_dv0, scale * dq_dvinf


def loss_and_gradient(
    spec: ModelSpec,
    params,
    times,
    volumes,
    config: CalibrationConfig | None = None,
    solve_config: SolveConfig | None = None,
) -> tuple[float, np.ndarray]:
    """Penalized normalized SSE and its exact parameter gradient.

    times/volumes are the calibration points in raw units; internally the
    times are shifted to start at 0 and the volumes divided by their
    maximum. Returns (+inf, nan gradient) when the trajectory blows up or
    the integration diverges at these parameters.
    """
    config = config or CalibrationConfig()
    vals = params.as_array() if isinstance(params, ParamVector) else np.asarray(params, float)
    times = np.asarray(times, dtype=np.float64)
    volumes = np.asarray(volumes, dtype=np.float64)
    tau = times - times[0]
    scale = volumes.max()
    target = volumes / scale
    try:
        pred, jac = models.predict_with_gradients(spec, vals, tau, solve_config)
    except (BlowUpError, DivergedError):
        return math.inf, np.full(vals.size, math.nan)
    pred = pred / scale
    jac = jac / scale
    resid = pred - target
    sse = float(resid @ resid)
    kappa = config.resolved_kappa(spec)
    pen, dpen_dv0, dpen_dvinf = _penalty_and_grad(spec, vals, kappa)
    grad = pen * 2.0 * (resid @ jac)
    grad[0] += dpen_dv0 * sse
    if spec.kind is not ModelKind.EXPONENTIAL:
        grad[1] += dpen_dvinf * sse
    value = pen * sse
    if not math.isfinite(value):
        return math.inf, np.full(vals.size, math.nan)
    return value, grad


def loss(
    spec: ModelSpec,
    params,
    times,
    volumes,
    config: CalibrationConfig | None = None,
    solve_config: SolveConfig | None = None,
) -> float:
    """Penalized normalized SSE at one parameter point (+inf on failure)."""
    return loss_and_gradient(spec, params, times, volumes, config, solve_config)[0]


def fit(
    spec: ModelSpec,
    lesion: Lesion,
    config: CalibrationConfig | None = None,
    solve_config: SolveConfig | None = None,
    holdout: Lesion | None = None,
) -> FitResult:
    """Calibrate one model to one lesion's measurements.

    lesion supplies the calibration points; holdout, when given, supplies
    later measurements to predict after fitting. The run stops at max_iters
    or once the best loss has failed to improve by early_stop_rel_tol
    (relative) for early_stop_patience consecutive iterations. Divergence is
    recorded if the loss is non-finite for the first 50 iterations straight,
    if the gradient at the best iterate was non-finite, or if the holdout
    prediction cannot be evaluated.
    """
    config = config or CalibrationConfig()
    solve_config = solve_config or SolveConfig()
    times = lesion.times_array()
    volumes = lesion.volumes_array()
    origin = float(times[0])
    scale = float(volumes.max())

    start = initialize(spec, lesion, config.seed)
    lower = np.asarray(start.lower)
    upper = np.asarray(start.upper)
    x = start.as_array()
    n = x.size

    lr = config.resolved_learning_rate(spec)
    beta1, beta2, eps = config.beta1, config.beta2, config.eps
    m = np.zeros(n)
    v = np.zeros(n)

    trace: list[float] = []
    best_x = x.copy()
    best_loss = math.inf
    best_grad_finite = True
    have_best = False
    stall = 0
    nonfinite_run = 0
    diverged = False

    for it in range(1, config.max_iters + 1):
        value, grad = loss_and_gradient(spec, x, times, volumes, config, solve_config)
        trace.append(value)
        grad_ok = bool(np.all(np.isfinite(grad)))

        if math.isfinite(value):
            nonfinite_run = 0
            if value < best_loss:
                improved = (not have_best) or (best_loss - value) > (
                    config.early_stop_rel_tol * abs(best_loss)
                )
                best_loss = value
                best_x = x.copy()
                best_grad_finite = grad_ok
                have_best = True
                stall = 0 if improved else stall + 1
            else:
                stall += 1
            if stall >= config.early_stop_patience:
                break
        else:
            nonfinite_run += 1
            if not have_best and nonfinite_run >= _NONFINITE_STARTUP_LIMIT:
                diverged = True
                break
            stall += 1
            if stall >= config.early_stop_patience and have_best:
                break

        if not (math.isfinite(value) and grad_ok):
            if have_best:
                # retreat halfway toward the best-known iterate; both points
                # lie in the open box, so the midpoint does too
                x = 0.5 * (x + best_x)
            continue

        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        m_hat = m / (1.0 - beta1**it)
        v_hat = v / (1.0 - beta2**it)
        proposal = x - lr * m_hat / (np.sqrt(v_hat) + eps)
        stepped = np.empty(n)
        for j in range(n):
            stepped[j] = bounded_step(x[j], proposal[j], lower[j], upper[j])
        x = stepped

    if have_best and not best_grad_finite:
        diverged = True

    if diverged or not have_best:
        status = FitStatus.DIVERGED
        final = start if not have_best else start.with_values(best_x)
        final_loss = best_loss if have_best else math.inf
    else:
        status = FitStatus.CONVERGED if stall >= config.early_stop_patience else FitStatus.EARLY_STOPPED
        final = start.with_values(best_x)
        final_loss = best_loss

    holdout_times: tuple[float, ...] = ()
    holdout_pred: tuple[float, ...] = ()
    holdout_err: tuple[float, ...] = ()
    if holdout is not None and status is not FitStatus.DIVERGED:
        h_times = holdout.times_array() - origin
        try:
            pred = models.predict(spec, final.as_array(), h_times, solve_config)
        except (BlowUpError, DivergedError):
            status = FitStatus.DIVERGED
        else:
            holdout_times = tuple(float(t) for t in holdout.times)
            holdout_pred = tuple(float(p) for p in pred)
            holdout_err = tuple(
                abs(float(p) - float(mv)) for p, mv in zip(pred, holdout.volumes)
            )

    return FitResult(
        spec=spec,
        params=final,
        loss=final_loss,
        loss_trace=tuple(trace),
        status=status,
        n_iterations=len(trace),
        volume_scale=scale,
        time_origin=origin,
        holdout_times=holdout_times,
        holdout_predictions=holdout_pred,
        holdout_abs_errors=holdout_err,
    )
