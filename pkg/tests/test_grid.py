"""Tests for the grid, norms, flat distance and Brownian sampling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fp_control.core.errors import (
    DimensionMismatchError,
    InvalidArgumentError,
    NegativeInputError,
)
from fp_control.grid import (
    boundary_mass,
    flat_distance,
    gradient_fd,
    make_grid,
    pair,
    sample_brownian,
    weight_dual_norm,
    weighted_norm,
)

SMALL = make_grid(0.0, 2.1, 20, 1.0, 10)

finite = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False, allow_infinity=False)
nonneg = st.floats(min_value=0.0, max_value=5.0, allow_nan=False, allow_infinity=False)
fields = arrays(np.float64, SMALL.n_x, elements=finite)
densities = arrays(np.float64, SMALL.n_x, elements=nonneg)


class TestMakeGrid:
    """Tests for make_grid."""

    def test_spacing_and_nodes(self):
        """Nodes exclude the two domain ends."""
        g = make_grid(-4.0, 6.0, 199, 1.0, 400)
        assert g.dx == pytest.approx(0.05)
        assert g.dt == pytest.approx(0.0025)
        assert g.nodes[0] == pytest.approx(-3.95)
        assert g.nodes[-1] == pytest.approx(5.95)
        assert g.times.shape == (401,)
        assert g.times[-1] == pytest.approx(1.0)

    def test_weights_grow_with_distance(self):
        """exp(eta0 * sqrt(1 + x^2)) is smallest near 0."""
        g = make_grid(-4.0, 6.0, 199, 1.0, 10, eta0=0.1)
        assert g.weights[np.argmin(np.abs(g.nodes))] == pytest.approx(g.weights.min())
        assert np.all(g.weights >= 1.0)

    def test_arrays_are_read_only(self):
        """Grid arrays cannot be modified in place."""
        g = make_grid(0.0, 1.0, 9, 1.0, 10)
        with pytest.raises(ValueError):
            g.nodes[0] = 5.0

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"x_min": 1.0, "x_max": 1.0},
            {"n_x": 2},
            {"n_t": 0},
            {"t_horizon": 0.0},
            {"eta0": -0.1},
        ],
    )
    def test_invalid_parameters(self, kwargs):
        """Each invalid parameter raises InvalidArgumentError."""
        base = {"x_min": 0.0, "x_max": 1.0, "n_x": 9, "t_horizon": 1.0, "n_t": 10}
        base.update(kwargs)
        with pytest.raises(InvalidArgumentError):
            make_grid(**base)

    def test_check_rejects_wrong_length(self):
        """A node array of the wrong length is rejected."""
        with pytest.raises(DimensionMismatchError):
            SMALL.check(np.zeros(SMALL.n_x + 1))


class TestNorms:
    """Tests for the weighted norm, the pairing and the gradient."""

    def test_zero_field(self):
        """The zero field has norm 0."""
        assert weighted_norm(np.zeros(SMALL.n_x), SMALL) == 0.0

    def test_unweighted_norm(self):
        """With eta0 = 0 the norm is the plain discrete L² norm."""
        g = make_grid(0.0, 1.0, 9, 1.0, 10, eta0=0.0)
        f = np.ones(g.n_x)
        assert weighted_norm(f, g) == pytest.approx(np.sqrt(g.n_x * g.dx))

    def test_weight_dual_norm(self):
        """With eta0 = 0 the dual weight norm is the L² norm of one."""
        g = make_grid(0.0, 1.0, 9, 1.0, 10, eta0=0.0)
        assert weight_dual_norm(g) == pytest.approx(np.sqrt(g.n_x * g.dx))

    @settings(max_examples=50, deadline=None)
    @given(fields, fields, fields, finite)
    def test_pair_is_bilinear(self, u, v, phi, a):
        """pair(a u + v, phi) = a pair(u, phi) + pair(v, phi)."""
        lhs = pair(a * u + v, phi, SMALL)
        rhs = a * pair(u, phi, SMALL) + pair(v, phi, SMALL)
        assert lhs == pytest.approx(rhs, abs=1e-9)

    def test_pair_dimension_mismatch(self):
        """Pairing arrays of different lengths is rejected."""
        with pytest.raises(DimensionMismatchError):
            pair(np.zeros(3), np.zeros(SMALL.n_x), SMALL)

    def test_gradient_of_linear_function(self):
        """Finite differences are exact on a linear function."""
        g = make_grid(0.0, 1.0, 19, 1.0, 10)
        assert np.allclose(gradient_fd(3.0 * g.nodes - 1.0, g), 3.0)

    def test_boundary_mass(self):
        """Mass in the end cells is reported per side."""
        f = np.zeros(SMALL.n_x)
        f[0] = 2.0
        f[-1] = 1.0
        left, right = boundary_mass(f, SMALL, width=3)
        assert left == pytest.approx(2.0 * SMALL.dx)
        assert right == pytest.approx(SMALL.dx)


class TestFlatDistance:
    """Tests for the bounded Lipschitz distance."""

    def test_identical_measures(self):
        """A measure is at distance 0 from itself."""
        f = np.linspace(0.0, 1.0, SMALL.n_x)
        assert flat_distance(f, f, SMALL) == 0.0

    def test_point_masses(self):
        """d(delta_a, delta_b) = min(|a - b|, 2) for unit masses."""
        g = make_grid(0.0, 10.1, 100, 1.0, 10)
        a = np.zeros(g.n_x)
        b = np.zeros(g.n_x)
        a[10] = 1.0 / g.dx
        b[20] = 1.0 / g.dx
        assert flat_distance(a, b, g) == pytest.approx(10 * g.dx, abs=1e-8)
        b[:] = 0.0
        b[90] = 1.0 / g.dx
        assert flat_distance(a, b, g) == pytest.approx(2.0, abs=1e-8)

    def test_mass_difference(self):
        """Measures at the same place differing in mass are |m1 - m2| apart."""
        f = np.zeros(SMALL.n_x)
        f[5] = 1.0 / SMALL.dx
        assert flat_distance(f, 0.5 * f, SMALL) == pytest.approx(0.5, abs=1e-8)

    def test_negative_input(self):
        """Negative densities are rejected."""
        f = np.ones(SMALL.n_x)
        f[3] = -1.0
        with pytest.raises(NegativeInputError):
            flat_distance(f, np.ones(SMALL.n_x), SMALL)

    @settings(max_examples=20, deadline=None)
    @given(densities, densities, densities)
    def test_metric_properties(self, a, b, c):
        """Symmetry, the triangle inequality and the total-variation bound."""
        ab = flat_distance(a, b, SMALL)
        assert ab == pytest.approx(flat_distance(b, a, SMALL), abs=1e-6)
        assert ab <= flat_distance(a, c, SMALL) + flat_distance(c, b, SMALL) + 1e-6
        assert ab <= np.sum(np.abs(a - b)) * SMALL.dx + 1e-6


class TestSampleBrownian:
    """Tests for sample_brownian."""

    def test_starts_at_zero(self):
        """Paths have n_t + 1 samples and start at 0."""
        path = sample_brownian(SMALL, seed=3)
        assert path.values.shape == (SMALL.n_t + 1,)
        assert path.values[0] == 0.0

    def test_deterministic_per_seed(self):
        """The same seed gives the same path; another seed does not."""
        a = sample_brownian(SMALL, seed=11)
        b = sample_brownian(SMALL, seed=11)
        c = sample_brownian(SMALL, seed=12)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)

    def test_increment_variance(self):
        """Increments have variance dt."""
        g = make_grid(0.0, 1.0, 9, 1.0, 200_000)
        increments = np.diff(sample_brownian(g, seed=0).values)
        assert np.var(increments) == pytest.approx(g.dt, rel=0.02)

    def test_interpolation(self):
        """Between samples the path is linear."""
        path = sample_brownian(SMALL, seed=1)
        mid = 0.5 * (SMALL.times[1] + SMALL.times[2])
        assert path.at(mid, SMALL.times) == pytest.approx(
            0.5 * (path.values[1] + path.values[2])
        )
