"""Tests for the linear adjoint and HJB solvers."""

from dataclasses import replace

import numpy as np
import pytest

from fp_control.adjoint import solve_adjoint, solve_hjb, step_backward
from fp_control.core.errors import CFLViolationError, DimensionMismatchError
from fp_control.forward import evaluate_cost, gaussian_density, solve_forward
from fp_control.grid import make_grid, pair
from fp_control.model import BailoutParams, bailout_model, constant_control
from fp_control.sensitivity import extract_control, random_interior_control


@pytest.fixture
def idle_flow(spec_kappa0, small_grid, rho0):
    """Forward path of the bailout model without injections."""
    return solve_forward(spec_kappa0, constant_control(0.0, small_grid), small_grid, rho0)


class TestStepBackward:
    """Tests for a single backward step."""

    def test_zero_coefficients_leave_u_unchanged(self, make_spec, small_grid, rho0):
        """With only diffusion a constant terminal value stays put."""
        u_next = np.full(small_grid.n_x, 0.7)
        spec = make_spec(a=0.3)
        u = step_backward(u_next, spec, rho0, np.zeros(small_grid.n_x), 0.0, small_grid)
        assert np.allclose(u, u_next, atol=1e-14)

    def test_constants_are_harmonic(self, make_spec, small_grid, rho0):
        """Constants solve the backward step when there is no killing."""
        u_next = -np.ones(small_grid.n_x)
        spec = make_spec(b0=0.5, a=0.8)
        u = step_backward(u_next, spec, rho0, np.full(small_grid.n_x, 1.0), 0.0, small_grid)
        assert np.allclose(u, -1.0, atol=1e-14)

    def test_dimension_mismatch(self, make_spec, small_grid, rho0):
        """A terminal slice of the wrong length is rejected."""
        with pytest.raises(DimensionMismatchError):
            step_backward(np.zeros(3), make_spec(), rho0, np.zeros(small_grid.n_x), 0.0, small_grid)

    def test_cfl_violation(self, make_spec, small_grid, rho0):
        """A drift too fast for the time step raises CFLViolationError."""
        with pytest.raises(CFLViolationError):
            zeros = np.zeros(small_grid.n_x)
            step_backward(zeros, make_spec(b0=100.0), rho0, zeros, 0.0, small_grid)


class TestSolveAdjoint:
    """Tests for the linear adjoint equation."""

    def test_backward_heat(self, make_spec):
        """u_T = cos x decays to exp(-a (T - t)) cos x."""
        g = make_grid(-10.0, 10.0, 399, 0.5, 500)
        spec = replace(make_spec(a=0.5), terminal_density_derivative=lambda x, s: np.cos(x))
        mu = solve_forward(spec, constant_control(0.0, g), g, gaussian_density(g, 0.0, 1.0))
        u = solve_adjoint(spec, mu, constant_control(0.0, g), g)
        interior = np.abs(g.nodes) <= 5.0
        exact = np.exp(-0.5 * 0.5) * np.cos(g.nodes)
        assert np.max(np.abs(u.initial - exact)[interior]) <= 1e-3

    def test_terminal_condition(self, spec_kappa1, small_grid, rho0):
        """The last slice is the terminal data; gradient arrays have matching shapes."""
        mu = solve_forward(spec_kappa1, constant_control(0.5, small_grid), small_grid, rho0)
        u = solve_adjoint(spec_kappa1, mu, constant_control(0.5, small_grid), small_grid)
        assert np.all(u.slices[-1] == -1.0)
        assert u.slices.shape == u.grad_slices.shape == (small_grid.n_t + 1, small_grid.n_x)
        assert u.control_grad_slices.shape == (small_grid.n_t, small_grid.n_x)

    def test_bailout_bounds_and_monotonicity(self, spec_kappa0, small_grid, idle_flow):
        """Without contagion -1 <= u <= 0 and u is nonincreasing in x."""
        tol = 1e-6 + 10 * small_grid.dt
        u = solve_adjoint(spec_kappa0, idle_flow, constant_control(0.0, small_grid), small_grid)
        assert u.slices.min() >= -1.0 - tol
        assert u.slices.max() <= tol
        assert np.all(np.diff(u.slices, axis=1) <= tol * small_grid.dx)

    @pytest.mark.parametrize("gamma_value", [0.0, 0.4, 1.0])
    def test_duality(self, spec_kappa0, small_grid, rho0, gamma_value):
        """cost(gamma) = 1 + <mu_0, u_0> for the linear problem."""
        gamma = constant_control(gamma_value, small_grid)
        mu = solve_forward(spec_kappa0, gamma, small_grid, rho0)
        u = solve_adjoint(spec_kappa0, mu, gamma, small_grid)
        cost = evaluate_cost(spec_kappa0, gamma, small_grid, rho0)
        dual = 1.0 + pair(rho0, u.initial, small_grid)
        assert cost == pytest.approx(dual, abs=20 * small_grid.dt)

    def test_duality_for_varying_control(self, spec_kappa0, small_grid, rho0):
        """The duality identity also holds for a varying interior control."""
        gamma = random_interior_control(spec_kappa0, small_grid, seed=3)
        mu = solve_forward(spec_kappa0, gamma, small_grid, rho0)
        u = solve_adjoint(spec_kappa0, mu, gamma, small_grid)
        cost = evaluate_cost(spec_kappa0, gamma, small_grid, rho0)
        dual = 1.0 + pair(rho0, u.initial, small_grid)
        assert cost == pytest.approx(dual, abs=20 * small_grid.dt)


class TestSolveHjb:
    """Tests for the semilinear HJB equation."""

    def test_expensive_control_is_never_used(self, small_grid, rho0):
        """With prohibitive costs the HJB is the uncontrolled adjoint."""
        spec = bailout_model(BailoutParams(w_weight=1e3))
        mu = solve_forward(spec, constant_control(0.0, small_grid), small_grid, rho0)
        hjb = solve_hjb(spec, mu, small_grid)
        idle = solve_adjoint(spec, mu, constant_control(0.0, small_grid), small_grid)
        assert np.allclose(hjb.slices, idle.slices, atol=1e-10, rtol=0.0)

    def test_degenerate_control_set(self, spec_kappa0, small_grid, idle_flow):
        """With G = {0} the HJB is the uncontrolled adjoint exactly."""
        spec = replace(spec_kappa0, g_max=0.0)
        hjb = solve_hjb(spec, idle_flow, small_grid)
        idle = solve_adjoint(spec, idle_flow, constant_control(0.0, small_grid), small_grid)
        assert np.array_equal(hjb.slices, idle.slices)

    def test_bailout_bounds(self, spec_kappa0, small_grid, idle_flow):
        """The HJB value respects -1 <= u <= 0 and does not increase in x."""
        tol = 1e-6 + 10 * small_grid.dt
        u = solve_hjb(spec_kappa0, idle_flow, small_grid)
        assert u.slices.min() >= -1.0 - tol
        assert u.slices.max() <= tol
        assert np.all(u.grad_slices[:, 1:-1] <= tol)

    def test_hjb_lies_below_every_adjoint(self, spec_kappa0, small_grid, idle_flow):
        """The HJB value is the minimum over controls for the linear problem."""
        u = solve_hjb(spec_kappa0, idle_flow, small_grid)
        for value in (0.0, 0.5, 1.0):
            gamma = constant_control(value, small_grid)
            v = solve_adjoint(spec_kappa0, idle_flow, gamma, small_grid)
            assert np.all(u.initial <= v.initial + 1e-12)

    @pytest.mark.parametrize("spec_name", ["spec_kappa0", "spec_kappa1"])
    def test_consistency_with_extracted_control(self, request, spec_name, small_grid, rho0):
        """The linear adjoint of the extracted control reproduces the HJB."""
        spec = request.getfixturevalue(spec_name)
        mu = solve_forward(spec, constant_control(0.5, small_grid), small_grid, rho0)
        hjb = solve_hjb(spec, mu, small_grid)
        gamma = extract_control(spec, hjb, 0.0, small_grid)
        linear = solve_adjoint(spec, mu, gamma, small_grid)
        assert np.allclose(linear.slices, hjb.slices, atol=1e-8, rtol=0.0)

    def test_active_set_is_an_interval(self, spec_kappa0, small_grid, idle_flow):
        """Injection nodes form a single block at every time."""
        u = solve_hjb(spec_kappa0, idle_flow, small_grid)
        gamma = extract_control(spec_kappa0, u, 0.0, small_grid)
        for row in gamma:
            idx = np.flatnonzero(row == 1.0)
            if idx.size:
                assert idx[-1] - idx[0] + 1 == idx.size
