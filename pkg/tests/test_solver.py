"""Grid construction, RK4 integration, and sensitivity propagation."""

import math

import numpy as np
import pytest

from odegrow import models
from odegrow.core import DivergedError, ModelKind, ModelSpec, ShapeMismatchError, ValidationError
from odegrow.solver import SolveConfig, build_grid, integrate
from odegrow._kernels import KIND_B1D
from odegrow.solver import integrate_kind, integrate_kind_with_sensitivities
from odegrow.models import BERTALANFFY_ODE


class TestBuildGrid:
    def test_output_times_land_on_grid_nodes_exactly(self) -> None:
        out = np.array([0.7, 3.1, 9.4, 20.0])
        grid, idx = build_grid(0.0, out, 57)
        assert np.all(np.diff(grid) > 0.0)
        assert grid[idx].tolist() == out.tolist()

    def test_first_output_may_coincide_with_t0(self) -> None:
        grid, idx = build_grid(0.0, np.array([0.0, 1.0, 2.0]), 10)
        assert grid[0] == 0.0
        assert idx[0] == 0
        assert grid[idx[1]] == 1.0

    def test_budget_scales_with_span(self) -> None:
        out = np.array([1.0, 2.0, 10.0])
        grid, _ = build_grid(0.0, out, 100)
        # every gap gets at least one step and the total roughly meets the budget
        assert len(grid) - 1 >= 100
        assert len(grid) - 1 <= 110

    def test_minimum_two_steps_per_output(self) -> None:
        out = np.linspace(1.0, 50.0, 25)
        grid, idx = build_grid(0.0, out, 4)
        assert len(grid) - 1 >= 2 * out.size - 25  # at least one node per gap
        assert grid[idx].tolist() == out.tolist()

    def test_single_instant_at_t0(self) -> None:
        grid, idx = build_grid(2.0, np.array([2.0]), 50)
        assert grid.tolist() == [2.0]
        assert idx.tolist() == [0]

    def test_rejects_bad_output_times(self) -> None:
        with pytest.raises(ValidationError):
            build_grid(0.0, np.array([]), 10)
        with pytest.raises(ValidationError):
            build_grid(0.0, np.array([1.0, 1.0]), 10)
        with pytest.raises(ValidationError):
            build_grid(0.0, np.array([-1.0, 1.0]), 10)


class TestIntegrate:
    def test_linear_decay_against_closed_form(self) -> None:
        out = np.linspace(0.5, 6.0, 12)
        states = integrate(lambda y: -y, np.array([2.0]), 0.0, out)
        expected = 2.0 * np.exp(-out)
        assert states[:, 0] == pytest.approx(expected, rel=1e-7)

    def test_harmonic_oscillator_against_trig(self) -> None:
        def rhs(y: np.ndarray) -> np.ndarray:
            return np.array([y[1], -y[0]])

        out = np.linspace(0.1, 2.0 * math.pi, 24)
        states = integrate(rhs, np.array([1.0, 0.0]), 0.0, out, SolveConfig(400))
        assert states[:, 0] == pytest.approx(np.cos(out), abs=1e-8)
        assert states[:, 1] == pytest.approx(-np.sin(out), abs=1e-8)

    def test_order_four_convergence(self) -> None:
        # halving the step size should shrink the error about sixteenfold
        out = np.array([1.0])
        errors = []
        for steps in (20, 40, 80):
            got = integrate(lambda y: -y, np.array([1.0]), 0.0, out, SolveConfig(steps))
            errors.append(abs(got[0, 0] - math.exp(-1.0)))
        assert errors[0] / errors[1] > 12.0
        assert errors[1] / errors[2] > 12.0

    def test_blow_up_raises_diverged(self) -> None:
        with pytest.raises(DivergedError):
            integrate(lambda y: y * y, np.array([1.0]), 0.0, np.array([2.0]))

    def test_magnitude_cap_raises_diverged(self) -> None:
        config = SolveConfig(steps_per_unit_span=50, max_state_magnitude=10.0)
        with pytest.raises(DivergedError):
            integrate(lambda y: y, np.array([1.0]), 0.0, np.array([5.0]), config)

    def test_rejects_matrix_state(self) -> None:
        with pytest.raises(ShapeMismatchError):
            integrate(lambda y: y, np.zeros((2, 2)), 0.0, np.array([1.0]))


class TestKernelIntegration:
    def test_matches_generic_integrator(self) -> None:
        spec = ModelSpec.for_kind(ModelKind.GENERAL_BERTALANFFY)
        vals = np.array([1.0, 5.0, 0.03, 0.5])
        out = np.linspace(5.0, 130.0, 9)
        config = SolveConfig(250)
        generic = integrate(
            lambda y: models.rhs(spec, y, vals), np.array([1.0]), 0.0, out, config
        )
        kernel = integrate_kind(
            BERTALANFFY_ODE, np.array([1.0]), np.array([5.0, 0.03, 0.5]), 0.0, out, config
        )
        assert kernel[:, 0] == pytest.approx(generic[:, 0], rel=1e-12)

    def test_integration_tracks_closed_form(self) -> None:
        out = np.linspace(2.0, 150.0, 14)
        kernel = integrate_kind(
            BERTALANFFY_ODE, np.array([1.0]), np.array([5.0, 0.03, 0.5]), 0.0, out, SolveConfig(300)
        )
        expected = [models.bertalanffy_solution(t, 1.0, 5.0, 0.03, 0.5) for t in out]
        assert kernel[:, 0] == pytest.approx(expected, rel=1e-8)

    def test_diverges_on_domain_exit(self) -> None:
        # negative omega drives the volume to zero in finite time
        with pytest.raises(DivergedError):
            integrate_kind(
                BERTALANFFY_ODE,
                np.array([1.0]),
                np.array([5.0, -2.0, 1.0]),
                0.0,
                np.array([40.0]),
                SolveConfig(100),
            )


class TestSensitivities:
    def test_parameter_sensitivities_match_finite_differences(self) -> None:
        out = np.linspace(3.0, 90.0, 7)
        y0 = np.array([1.2])
        p = np.array([5.0, 0.03, 0.4])
        config = SolveConfig(150)
        states, g_params, g_y0 = integrate_kind_with_sensitivities(
            BERTALANFFY_ODE, y0, p, 0.0, out, config
        )
        assert states.shape == (7, 1)
        assert g_params.shape == (7, 1, 3)
        assert g_y0.shape == (7, 1, 1)
        for j in range(3):
            h = 1e-6 * max(1.0, abs(p[j]))
            pp = p.copy()
            pp[j] += h
            pm = p.copy()
            pm[j] -= h
            up = integrate_kind(BERTALANFFY_ODE, y0, pp, 0.0, out, config)
            dn = integrate_kind(BERTALANFFY_ODE, y0, pm, 0.0, out, config)
            fd = (up[:, 0] - dn[:, 0]) / (2 * h)
            assert g_params[:, 0, j] == pytest.approx(fd, rel=1e-5, abs=1e-8)

    def test_initial_state_sensitivity_matches_finite_differences(self) -> None:
        out = np.linspace(3.0, 90.0, 7)
        p = np.array([5.0, 0.03, 0.4])
        config = SolveConfig(150)
        h = 1e-7
        _, _, g_y0 = integrate_kind_with_sensitivities(
            BERTALANFFY_ODE, np.array([1.2]), p, 0.0, out, config
        )
        up = integrate_kind(BERTALANFFY_ODE, np.array([1.2 + h]), p, 0.0, out, config)
        dn = integrate_kind(BERTALANFFY_ODE, np.array([1.2 - h]), p, 0.0, out, config)
        fd = (up[:, 0] - dn[:, 0]) / (2 * h)
        assert g_y0[:, 0, 0] == pytest.approx(fd, rel=1e-5)

    def test_sensitivity_of_output_at_t0_is_identity(self) -> None:
        out = np.array([0.0, 10.0])
        states, g_params, g_y0 = integrate_kind_with_sensitivities(
            BERTALANFFY_ODE, np.array([1.2]), np.array([5.0, 0.03, 0.4]), 0.0, out, SolveConfig(60)
        )
        assert states[0, 0] == 1.2
        assert g_y0[0, 0, 0] == 1.0
        assert g_params[0, 0].tolist() == [0.0, 0.0, 0.0]
