"""Shared pytest fixtures and configuration."""

import json
from pathlib import Path

import numpy as np
import pytest

from fp_control.forward import gaussian_density
from fp_control.grid import make_grid
from fp_control.model import BailoutParams, ModelSpec, bailout_model

CONFIG_DIR = Path(__file__).resolve().parents[1] / "config"


@pytest.fixture
def small_grid():
    """Baseline domain on a coarse mesh: dx = 0.1, dt = 0.01."""
    return make_grid(-4.0, 6.0, 99, 1.0, 100)


@pytest.fixture
def tiny_grid():
    """Very coarse mesh for tests that solve many times: dx = 0.2, dt = 0.02."""
    return make_grid(-4.0, 6.0, 49, 1.0, 50)


@pytest.fixture
def baseline_grid():
    """Baseline resolution of the scenario files: n_x = 199, n_t = 400."""
    return make_grid(-4.0, 6.0, 199, 1.0, 400)


@pytest.fixture
def params_kappa0():
    """Baseline bailout parameters without contagion."""
    return BailoutParams()


@pytest.fixture
def params_kappa1():
    """Baseline bailout parameters with contagion kappa = 1."""
    return BailoutParams(kappa=1.0)


@pytest.fixture
def spec_kappa0(params_kappa0):
    """Bailout model without contagion."""
    return bailout_model(params_kappa0)


@pytest.fixture
def spec_kappa1(params_kappa1):
    """Bailout model with contagion."""
    return bailout_model(params_kappa1)


@pytest.fixture
def rho0(small_grid):
    """Initial capital N(0.3, 0.5²) on the small grid."""
    return gaussian_density(small_grid, 0.3, 0.5)


@pytest.fixture
def baseline_rho0(baseline_grid):
    """Initial capital N(0.3, 0.5²) on the baseline grid."""
    return gaussian_density(baseline_grid, 0.3, 0.5)


@pytest.fixture
def tiny_rho0(tiny_grid):
    """Initial capital N(0.3, 0.5²) on the tiny grid."""
    return gaussian_density(tiny_grid, 0.3, 0.5)


@pytest.fixture
def make_spec():
    """
    Factory for models with constant coefficients:
    lam, b0, slope, diffusion a, f0, running cost w * g and terminal cost c * mass.
    """

    def _make(
        lam: float = 0.0,
        b0: float = 0.0,
        slope: float = 1.0,
        a: float = 0.5,
        f0: float = 0.0,
        w: float = 0.0,
        c: float = 0.0,
        g_min: float = 0.0,
        g_max: float = 1.0,
        floor: float | None = None,
    ) -> ModelSpec:
        def const(value):
            return lambda *args: np.full(np.shape(args[1]), value, dtype=float)

        return ModelSpec(
            name="constant-test",
            summary_fns=lambda t, x: np.ones((1, np.size(x))),
            lambda_coeff=const(lam),
            drift0=const(b0),
            drift1_slope=const(slope),
            diffusion=const(a),
            run_cost0=const(f0),
            run_cost1=lambda t, x, g: w * np.asarray(g, dtype=float) * np.ones(np.shape(x)),
            run_cost1_grad=lambda t, x, g: np.full(
                np.broadcast_shapes(np.shape(x), np.shape(g)), w
            ),
            terminal_summary_fns=lambda x: np.ones((1, np.size(x))),
            terminal_cost=lambda s: c * float(s[0]),
            terminal_density_derivative=lambda x, s: np.full(np.shape(x), c),
            g_min=g_min,
            g_max=g_max,
            diffusion_floor=floor if floor is not None else max(a, 1e-12),
            run_cost1_affine=True,
        )

    return _make


@pytest.fixture
def small_scenario(tmp_path):
    """Baseline scenario file on a coarse mesh, written to a temporary directory."""
    data = json.loads((CONFIG_DIR / "baseline_kappa0.json").read_text())
    data.update(
        n_x=49,
        n_t=50,
        n_particles=500,
        n_trials=2,
        gradcheck_pairs=1,
        out_dir=str(tmp_path / "out"),
    )
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(data))
    return path
