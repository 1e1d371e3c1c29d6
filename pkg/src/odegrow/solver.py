"""Fixed-step RK4 integration with exact discrete sensitivities.

The step grid always contains every requested output time, so reported
states are never interpolated. Derivatives of the discrete trajectory are
produced by reverse accumulation through the stored RK4 stage sequence,
which differentiates exactly what the forward pass computed rather than the
underlying continuous system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import DivergedError, ShapeMismatchError, ValidationError


@dataclass(frozen=True)
class SolveConfig:
    """Integration controls.

    steps_per_unit_span is the total step budget spread over
    [t0, output_times[-1]]; it is raised to twice the number of output times
    when that is larger so every output lands on its own node.
    """

    steps_per_unit_span: int = 200
    max_state_magnitude: float = 1e8

    def __post_init__(self) -> None:
        if self.steps_per_unit_span < 1:
            raise ValidationError("steps_per_unit_span must be a positive integer")
        if not self.max_state_magnitude > 0.0:
            raise ValidationError("max_state_magnitude must be positive")


@dataclass(frozen=True)
class OdeSystem:
    """Handle to one compiled right-hand side and its Jacobians."""

    kind_id: int
    dim: int
    n_params: int


def build_grid(t0: float, output_times, steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Step grid from t0 through the last output time.

    Returns (grid, out_idx) where out_idx[k] is the grid node holding
    output_times[k] exactly. The step budget is split across the gaps
    between consecutive output times proportionally to their length, with
    at least one step per gap.
    """
    t0 = float(t0)
    out = np.asarray(output_times, dtype=np.float64)
    if out.ndim != 1 or out.size == 0:
        raise ValidationError("output_times must be a non-empty 1-d array")
    if np.any(np.diff(out) <= 0.0):
        raise ValidationError("output_times must be strictly increasing")
    if out[0] < t0:
        raise ValidationError("output_times must not precede t0")
    anchors = [t0] + [float(t) for t in out if t > t0]
    if len(anchors) == 1:
        return np.array([t0]), np.zeros(out.size, dtype=np.int64)
    span = anchors[-1] - anchors[0]
    budget = max(int(steps), 2 * out.size)
    nodes = [t0]
    anchor_pos = {t0: 0}
    for a, b in zip(anchors, anchors[1:]):
        nsub = max(1, round(budget * (b - a) / span))
        for q in range(1, nsub):
            nodes.append(a + (b - a) * (q / nsub))
        nodes.append(b)
        anchor_pos[b] = len(nodes) - 1
    out_idx = np.array([anchor_pos[float(t)] for t in out], dtype=np.int64)
    return np.asarray(nodes, dtype=np.float64), out_idx


def integrate(rhs, state0, t0: float, output_times, config: SolveConfig | None = None) -> np.ndarray:
    """Classical RK4 for an arbitrary autonomous rhs callable.

    rhs maps a state array to its time derivative. Returns the states at the
    output times, shape (n_outputs, dim). Raises DivergedError when any state
    component stops being finite or exceeds config.max_state_magnitude.
    """
    config = config or SolveConfig()
    y = np.asarray(state0, dtype=np.float64).copy()
    if y.ndim != 1:
        raise ShapeMismatchError("state0 must be a 1-d array")
    grid, out_idx = build_grid(t0, output_times, config.steps_per_unit_span)
    out = np.empty((out_idx.size, y.size))
    limit = config.max_state_magnitude
    pos = 0
    while pos < out_idx.size and out_idx[pos] == 0:
        out[pos] = y
        pos += 1
    for i in range(grid.size - 1):
        h = grid[i + 1] - grid[i]
        k1 = np.asarray(rhs(y), dtype=np.float64)
        k2 = np.asarray(rhs(y + 0.5 * h * k1), dtype=np.float64)
        k3 = np.asarray(rhs(y + 0.5 * h * k2), dtype=np.float64)
        k4 = np.asarray(rhs(y + h * k3), dtype=np.float64)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)) or np.any(np.abs(y) > limit):
            raise DivergedError(f"state left the admissible region at t={grid[i + 1]!r}")
        while pos < out_idx.size and out_idx[pos] == i + 1:
            out[pos] = y
            pos += 1
    return out


def _prepare(system: OdeSystem, state0, params, t0, output_times, config):
    y0 = np.ascontiguousarray(state0, dtype=np.float64)
    p = np.ascontiguousarray(params, dtype=np.float64)
    if y0.shape != (system.dim,):
        raise ShapeMismatchError(f"state0 must have shape ({system.dim},), got {y0.shape}")
    if p.shape != (system.n_params,):
        raise ShapeMismatchError(
            f"params must have shape ({system.n_params},), got {p.shape}"
        )
    grid, out_idx = build_grid(t0, output_times, config.steps_per_unit_span)
    return y0, p, grid, out_idx


def integrate_kind(
    system: OdeSystem, state0, params, t0: float, output_times, config: SolveConfig | None = None
) -> np.ndarray:
    """Forward integration through the compiled kernel for one model kind."""
    config = config or SolveConfig()
    y0, p, grid, out_idx = _prepare(system, state0, params, t0, output_times, config)
    traj = np.empty((grid.size, system.dim))
    dummy = np.empty((1, 4, system.dim))
    ok = _kernels.rk4_forward(
        system.kind_id, y0, p, grid, config.max_state_magnitude, False, dummy, traj
    )
    if not ok:
        raise DivergedError("integration left the admissible region")
    return traj[out_idx]


def integrate_kind_with_sensitivities(
    system: OdeSystem, state0, params, t0: float, output_times, config: SolveConfig | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """States plus exact discrete-trajectory derivatives at each output time.

    Returns (states, d_params, d_state0):
      states   (n_out, dim)
      d_params (n_out, dim, n_params)  d state / d params
      d_state0 (n_out, dim, dim)       d state / d initial state
    computed by a single reverse-accumulation sweep over the stored RK4
    stages, seeding an identity cotangent block at every output time.
    """
    config = config or SolveConfig()
    y0, p, grid, out_idx = _prepare(system, state0, params, t0, output_times, config)
    n_steps = max(grid.size - 1, 1)
    traj = np.empty((grid.size, system.dim))
    stages = np.empty((n_steps, 4, system.dim))
    ok = _kernels.rk4_forward(
        system.kind_id, y0, p, grid, config.max_state_magnitude, True, stages, traj
    )
    if not ok:
        raise DivergedError("integration left the admissible region")
    n_out = out_idx.size
    g_params = np.zeros((n_out, system.dim, system.n_params))
    g_y0 = np.zeros((n_out, system.dim, system.dim))
    _kernels.rk4_backward(system.kind_id, p, grid, stages, out_idx, g_params, g_y0)
    return traj[out_idx], g_params, g_y0
