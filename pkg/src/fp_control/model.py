"""
Problem specification: coefficients, costs, their linear functional derivatives, the control
set, the Hamiltonians and the shift along the common noise.

Measure dependence goes through finitely many linear functionals. A model declares test
functions phi_k through ``summary_fns(t, x)``; solvers compute the summaries
s_k = <mu_t, phi_k> once per time step and hand the vector ``s`` to the coefficient callables.
All callables are vectorised over the node array ``x``.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass, replace

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, Field
from scipy.optimize import minimize_scalar
from scipy.special import expit

from fp_control.core.errors import (
    ControlOutOfRangeError,
    InvalidArgumentError,
    TimeGridMismatchError,
)
from fp_control.grid import FloatArray, Grid, NoisePath

logger = logging.getLogger(__name__)

CONTROL_TOL = 1e-12

SummaryFns = Callable[[float, FloatArray], FloatArray]
LocalCoeff = Callable[[float, FloatArray, FloatArray], FloatArray]
SpaceCoeff = Callable[[float, FloatArray], FloatArray]
ControlCost = Callable[[float, FloatArray, FloatArray], FloatArray]
Kernel = Callable[[float, FloatArray, FloatArray, FloatArray], FloatArray]


@dataclass(frozen=True)
class ModelSpec:
    """
    Coefficients of the controlled generator and the costs.

    Signatures (x and y are node arrays, s the summary vector, g control values):

    - ``lambda_coeff(t, x, s)``, ``drift0(t, x, s)``, ``run_cost0(t, x, s)``
    - ``drift1_slope(t, x)`` with b1(t, x, g) = slope * g, ``diffusion(t, x)``
    - ``run_cost1(t, x, g)``, ``run_cost1_grad(t, x, g)`` (convex in g)
    - ``terminal_summary_fns(x)``; ``terminal_cost(s_T)``;
      ``terminal_density_derivative(x, s_T)`` is Dpsi
    - ``d_lambda``, ``d_drift0``, ``d_run_cost0`` as ``(t, x, s, y)``; None means the
      coefficient does not depend on the measure.
    """

    name: str
    summary_fns: SummaryFns
    lambda_coeff: LocalCoeff
    drift0: LocalCoeff
    drift1_slope: SpaceCoeff
    diffusion: SpaceCoeff
    run_cost0: LocalCoeff
    run_cost1: ControlCost
    run_cost1_grad: ControlCost
    terminal_summary_fns: Callable[[FloatArray], FloatArray]
    terminal_cost: Callable[[FloatArray], float]
    terminal_density_derivative: Callable[[FloatArray, FloatArray], FloatArray]
    g_min: float
    g_max: float
    diffusion_floor: float
    sigma0: float = 0.0
    d_lambda: Kernel | None = None
    d_drift0: Kernel | None = None
    d_run_cost0: Kernel | None = None
    run_cost1_affine: bool = False

    def __post_init__(self) -> None:
        if self.g_min > self.g_max:
            raise InvalidArgumentError(
                f"empty control set: g_min ({self.g_min}) > g_max ({self.g_max})"
            )
        if self.diffusion_floor <= 0:
            raise InvalidArgumentError("diffusion_floor must be positive (uniform parabolicity)")
        if self.sigma0 < 0:
            raise InvalidArgumentError(f"sigma0 must be nonnegative, got {self.sigma0}")

    @property
    def is_measure_dependent(self) -> bool:
        return any(k is not None for k in (self.d_lambda, self.d_drift0, self.d_run_cost0))


class BailoutParams(BaseModel):
    """Parameters of the government bailout model."""

    sigma: float = Field(0.5, gt=0, description="Idiosyncratic volatility")
    sigma0: float = Field(0.0, ge=0, description="Common-noise volatility")
    kappa: float = Field(0.0, ge=0, description="Contagion strength")
    w_weight: float = Field(0.3, gt=0, description="Weight of the capital injections")
    g_max: float = Field(1.0, gt=0, description="Maximal injection rate")
    hazard_max: float = Field(2.0, gt=0, description="Supremum of the default intensity")
    hazard_scale: float = Field(0.5, gt=0, description="Length scale of the default intensity")
    T: float = Field(1.0, gt=0, description="Time horizon")
    initial_mean: float = Field(0.3, description="Mean of the Gaussian initial capital")
    initial_sd: float = Field(0.5, gt=0, description="Standard deviation of the initial capital")


@dataclass(frozen=True)
class StepCoefficients:
    """Coefficients of one time step, evaluated at the nodes with frozen summaries."""

    t: float
    summaries: FloatArray
    lam: FloatArray
    drift0: FloatArray
    slope: FloatArray
    diffusion: FloatArray
    cost0: FloatArray


def hazard_rate(x: npt.ArrayLike, hazard_max: float, hazard_scale: float) -> FloatArray:
    """Default intensity: hazard_max * (1 - exp(x / hazard_scale)) on x < 0, zero on x >= 0."""
    arr = np.asarray(x, dtype=np.float64)
    return hazard_max * (1.0 - np.exp(np.minimum(arr, 0.0) / hazard_scale))


def bailout_model(p: BailoutParams) -> ModelSpec:
    """
    Bailout model: killing at rate hazard(x), drift gamma - kappa <mu, hazard>, diffusion
    (sigma² + sigma0²)/2, running cost w * gamma, terminal cost 1 - mu(R).

    Raises:
        InvalidArgumentError: on nonpositive sigma, w_weight or g_max.
    """
    for key in ("sigma", "w_weight", "g_max"):
        if getattr(p, key) <= 0:
            raise InvalidArgumentError(f"{key} must be positive, got {getattr(p, key)}")

    kappa = float(p.kappa)
    w = float(p.w_weight)
    hmax, hscale = float(p.hazard_max), float(p.hazard_scale)
    diffusion = 0.5 * (p.sigma**2 + p.sigma0**2)

    def hazard(x: FloatArray) -> FloatArray:
        return hazard_rate(x, hmax, hscale)

    def d_drift0(t: float, x: FloatArray, s: FloatArray, y: FloatArray) -> FloatArray:
        return np.broadcast_to(-kappa * hazard(y), np.broadcast_shapes(np.shape(x), np.shape(y)))

    return ModelSpec(
        name=f"bailout(kappa={kappa:g})",
        summary_fns=lambda t, x: hazard(x)[np.newaxis, :],
        lambda_coeff=lambda t, x, s: -hazard(x),
        drift0=lambda t, x, s: np.full(np.shape(x), -kappa * s[0]),
        drift1_slope=lambda t, x: np.ones(np.shape(x)),
        diffusion=lambda t, x: np.full(np.shape(x), diffusion),
        run_cost0=lambda t, x, s: np.zeros(np.shape(x)),
        run_cost1=lambda t, x, g: w * np.asarray(g, dtype=np.float64),
        run_cost1_grad=lambda t, x, g: np.full(np.broadcast_shapes(np.shape(x), np.shape(g)), w),
        terminal_summary_fns=lambda x: np.ones((1, np.size(x))),
        terminal_cost=lambda s: 1.0 - float(s[0]),
        terminal_density_derivative=lambda x, s: -np.ones(np.shape(x)),
        g_min=0.0,
        g_max=float(p.g_max),
        diffusion_floor=diffusion,
        sigma0=float(p.sigma0),
        d_lambda=None,
        d_drift0=d_drift0 if kappa else None,
        d_run_cost0=None,
        run_cost1_affine=True,
    )


# --- evaluation helpers ---


def summaries(spec: ModelSpec, t: float, mu: FloatArray, g: Grid) -> FloatArray:
    """Vector of <mu, phi_k> for the model's test functions at time t."""
    phis = np.atleast_2d(spec.summary_fns(t, g.nodes))
    return phis @ g.check(mu, "mu") * g.dx


def evaluate_coefficients(spec: ModelSpec, t: float, mu: FloatArray, g: Grid) -> StepCoefficients:
    s = summaries(spec, t, mu, g)
    x = g.nodes
    return StepCoefficients(
        t=t,
        summaries=s,
        lam=np.asarray(spec.lambda_coeff(t, x, s), dtype=np.float64),
        drift0=np.asarray(spec.drift0(t, x, s), dtype=np.float64),
        slope=np.asarray(spec.drift1_slope(t, x), dtype=np.float64),
        diffusion=np.asarray(spec.diffusion(t, x), dtype=np.float64),
        cost0=np.asarray(spec.run_cost0(t, x, s), dtype=np.float64),
    )


def kernel_matrix(kernel: Kernel, t: float, s: FloatArray, g: Grid) -> FloatArray:
    """K[i, j] = kernel(t, x_i, s, y_j) on the nodes."""
    x = g.nodes
    return np.broadcast_to(kernel(t, x[:, np.newaxis], s, x[np.newaxis, :]), (g.n_x, g.n_x))


def control_direction(spec: ModelSpec, slope: FloatArray, gamma: FloatArray) -> FloatArray:
    """
    Upwind direction (+1 or -1) of the control part of the drift at each node.

    When G does not straddle zero the direction depends on the slope only, which keeps the
    transport of the control term linear in gamma.
    """
    if spec.g_min >= 0:
        sign = np.sign(slope)
    elif spec.g_max <= 0:
        sign = -np.sign(slope)
    else:
        sign = np.sign(slope * gamma)
    return np.where(sign < 0, -1.0, 1.0)


def validate_control(gamma: npt.ArrayLike, spec: ModelSpec, g: Grid) -> FloatArray:
    """
    Return gamma as an (n_t, n_x) array after checking every entry lies in G.

    Raises:
        DimensionMismatchError: on a shape mismatch.
        ControlOutOfRangeError: if an entry leaves [g_min, g_max].
    """
    arr = g.check_path(gamma, g.n_t, "control")
    if arr.size and (arr.min() < spec.g_min - CONTROL_TOL or arr.max() > spec.g_max + CONTROL_TOL):
        raise ControlOutOfRangeError(
            f"control takes values in [{arr.min():.6g}, {arr.max():.6g}], "
            f"outside G = [{spec.g_min:g}, {spec.g_max:g}]"
        )
    return arr


def constant_control(value: float, g: Grid) -> FloatArray:
    return np.full((g.n_t, g.n_x), float(value))


def _check_in_g(spec: ModelSpec, g: FloatArray) -> None:
    if np.any(g < spec.g_min - CONTROL_TOL) or np.any(g > spec.g_max + CONTROL_TOL):
        raise ControlOutOfRangeError(
            f"control value outside G = [{spec.g_min:g}, {spec.g_max:g}]"
        )


def _scalar_or_array(value: FloatArray, scalar: bool) -> float | FloatArray:
    return float(value.reshape(-1)[0]) if scalar else value


# --- Hamiltonians ---


def hamiltonian_h1(
    spec: ModelSpec, t: float, x: npt.ArrayLike, p: npt.ArrayLike, g: npt.ArrayLike
) -> float | FloatArray:
    """
    Control part of the Hamiltonian, H1(t, x, p, g) = b1(t, x, g) p + f1(t, x, g).

    Raises:
        ControlOutOfRangeError: if g is not in G.
    """
    scalar = all(np.ndim(v) == 0 for v in (x, p, g))
    xa, pa, ga = np.broadcast_arrays(
        *(np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in (x, p, g))
    )
    _check_in_g(spec, ga)
    value = spec.drift1_slope(t, xa) * ga * pa + spec.run_cost1(t, xa, ga)
    return _scalar_or_array(np.asarray(value, dtype=np.float64), scalar)


def _control_slope(spec: ModelSpec, t: float, x: FloatArray, p: FloatArray) -> FloatArray:
    """(H1(g_max) - H1(g_min)) / (g_max - g_min); the exact slope of H1 for affine costs."""
    width = spec.g_max - spec.g_min
    if spec.run_cost1_affine:
        return spec.drift1_slope(t, x) * p + spec.run_cost1_grad(t, x, np.full(x.shape, spec.g_min))
    high = hamiltonian_h1(spec, t, x, p, np.full(x.shape, spec.g_max))
    low = hamiltonian_h1(spec, t, x, p, np.full(x.shape, spec.g_min))
    return (np.asarray(high) - np.asarray(low)) / width


def minimize_h1(
    spec: ModelSpec, t: float, x: npt.ArrayLike, p: npt.ArrayLike
) -> float | FloatArray:
    """
    Pointwise minimiser of H1 over G.

    For affine running costs the minimiser is bang-bang: g_max where the slope of H1 in g is
    <= 0 (ties go to g_max), g_min otherwise. Other convex costs are minimised numerically.
    """
    scalar = np.ndim(x) == 0 and np.ndim(p) == 0
    xa, pa = np.broadcast_arrays(
        np.atleast_1d(np.asarray(x, dtype=np.float64)),
        np.atleast_1d(np.asarray(p, dtype=np.float64)),
    )
    if spec.g_max == spec.g_min:
        return _scalar_or_array(np.full(xa.shape, spec.g_min), scalar)
    if spec.run_cost1_affine:
        c = _control_slope(spec, t, xa, pa)
        return _scalar_or_array(np.where(c <= 0, spec.g_max, spec.g_min), scalar)

    out = np.empty(xa.shape)
    for idx, (xi, pi) in enumerate(zip(xa.ravel(), pa.ravel())):
        res = minimize_scalar(
            lambda gv: float(hamiltonian_h1(spec, t, xi, pi, gv)),
            bounds=(spec.g_min, spec.g_max),
            method="bounded",
            options={"xatol": 1e-10},
        )
        out.flat[idx] = res.x
    return _scalar_or_array(out, scalar)


def relaxed_minimizer(
    spec: ModelSpec, t: float, x: FloatArray, p: FloatArray, smoothing: float
) -> FloatArray:
    """
    Sigmoid blend of the two extreme points of G; smoothing = 0 gives minimize_h1.

    For the bailout model this is g_max * expit(-(p + w) / smoothing).
    """
    if smoothing <= 0:
        return np.asarray(minimize_h1(spec, t, x, p), dtype=np.float64)
    if spec.g_max == spec.g_min:
        return np.full(np.shape(x), spec.g_min)
    c = _control_slope(spec, t, np.asarray(x, dtype=np.float64), np.asarray(p, dtype=np.float64))
    return spec.g_min + (spec.g_max - spec.g_min) * expit(-c / smoothing)


def dH(
    spec: ModelSpec,
    t: float,
    mu: npt.ArrayLike,
    u: npt.ArrayLike,
    grad_u: npt.ArrayLike,
    gamma: npt.ArrayLike,
    g: Grid,
    *,
    drift0_grad: npt.ArrayLike | None = None,
) -> FloatArray:
    """
    Linear functional derivative of the Hamiltonian at the nodes:

        DH(x) = lam u + b0 p0 + slope gamma p + f0 + f1(gamma)
                + <mu, Dlam(.)(x) u + Db0(.)(x) p0 + Df0(.)(x)>

    ``grad_u`` (p) is the gradient paired with the control part of the drift; ``drift0_grad``
    (p0) is the one paired with b0 and defaults to ``grad_u``.
    """
    mu_a = g.check(mu, "mu")
    u_a = g.check(u, "u")
    p = g.check(grad_u, "grad_u")
    p0 = p if drift0_grad is None else g.check(drift0_grad, "drift0_grad")
    gam = g.check(gamma, "gamma")
    _check_in_g(spec, gam)

    c = evaluate_coefficients(spec, t, mu_a, g)
    x = g.nodes
    local = (
        c.lam * u_a
        + c.drift0 * p0
        + c.slope * gam * p
        + c.cost0
        + np.asarray(spec.run_cost1(t, x, gam), dtype=np.float64)
    )
    return local + nonlocal_bracket(spec, c, mu_a, u_a, p0, g)


def nonlocal_bracket(
    spec: ModelSpec,
    c: StepCoefficients,
    mu: FloatArray,
    u: FloatArray,
    p0: FloatArray,
    g: Grid,
) -> FloatArray:
    """<mu, Dlam(.)(x) u + Db0(.)(x) p0 + Df0(.)(x)> at every node x."""
    out = np.zeros(g.n_x)
    weight = mu * g.dx
    for kernel, factor in ((spec.d_lambda, u), (spec.d_drift0, p0), (spec.d_run_cost0, None)):
        if kernel is None:
            continue
        mat = kernel_matrix(kernel, c.t, c.summaries, g)
        out += (weight if factor is None else weight * factor) @ mat
    return out


# --- costs ---


def running_cost(
    spec: ModelSpec, t: float, mu: npt.ArrayLike, gamma: npt.ArrayLike, g: Grid
) -> float:
    """<mu_t, f0(t, ., mu_t) + f1(t, ., gamma_t)>."""
    mu_a = g.check(mu, "mu")
    gam = g.check(gamma, "gamma")
    s = summaries(spec, t, mu_a, g)
    f = spec.run_cost0(t, g.nodes, s) + spec.run_cost1(t, g.nodes, gam)
    return float(np.dot(mu_a, f) * g.dx)


def terminal_summaries(spec: ModelSpec, mu_T: npt.ArrayLike, g: Grid) -> FloatArray:
    phis = np.atleast_2d(spec.terminal_summary_fns(g.nodes))
    return phis @ g.check(mu_T, "mu_T") * g.dx


def terminal_cost_eval(spec: ModelSpec, mu_T: npt.ArrayLike, g: Grid) -> float:
    return float(spec.terminal_cost(terminal_summaries(spec, mu_T, g)))


def terminal_adjoint(spec: ModelSpec, mu_T: npt.ArrayLike, g: Grid) -> FloatArray:
    """Terminal condition u_T = Dpsi(mu_T) at the nodes."""
    s_T = terminal_summaries(spec, mu_T, g)
    return np.asarray(spec.terminal_density_derivative(g.nodes, s_T), dtype=np.float64).copy()


# --- common-noise shift ---


def _check_noise(wpath: NoisePath, g: Grid) -> None:
    if np.shape(wpath.values) != (g.n_t + 1,):
        raise TimeGridMismatchError(
            f"noise path has {np.size(wpath.values)} samples, grid expects {g.n_t + 1}"
        )


def shift_model(spec: ModelSpec, wpath: NoisePath, g: Grid) -> ModelSpec:
    """
    Coefficients seen along the shift x -> x + sigma0 W_t.

    Every evaluation at (t, x) moves to (t, x + sigma0 W_t), the summary test functions move
    the same way (so summaries of mu are summaries of the pushed-forward measure) and the
    diffusion loses its sigma0²/2 augmentation. The returned model has sigma0 = 0.

    Raises:
        TimeGridMismatchError: if the path is not sampled on the grid's time nodes.
    """
    _check_noise(wpath, g)
    sigma0 = spec.sigma0
    times = g.times
    values = np.asarray(wpath.values, dtype=np.float64)
    terminal_shift = sigma0 * float(values[-1])
    half_var = 0.5 * sigma0**2

    def sh(t: float) -> float:
        return sigma0 * float(np.interp(t, times, values))

    def kernel(base: Kernel | None) -> Kernel | None:
        if base is None:
            return None
        return lambda t, x, s, y: base(t, x + sh(t), s, y + sh(t))

    return replace(
        spec,
        name=f"{spec.name}~shifted",
        summary_fns=lambda t, x: spec.summary_fns(t, x + sh(t)),
        lambda_coeff=lambda t, x, s: spec.lambda_coeff(t, x + sh(t), s),
        drift0=lambda t, x, s: spec.drift0(t, x + sh(t), s),
        drift1_slope=lambda t, x: spec.drift1_slope(t, x + sh(t)),
        diffusion=lambda t, x: spec.diffusion(t, x + sh(t)) - half_var,
        run_cost0=lambda t, x, s: spec.run_cost0(t, x + sh(t), s),
        run_cost1=lambda t, x, gv: spec.run_cost1(t, x + sh(t), gv),
        run_cost1_grad=lambda t, x, gv: spec.run_cost1_grad(t, x + sh(t), gv),
        terminal_summary_fns=lambda x: spec.terminal_summary_fns(x + terminal_shift),
        terminal_density_derivative=lambda x, s: spec.terminal_density_derivative(
            x + terminal_shift, s
        ),
        d_lambda=kernel(spec.d_lambda),
        d_drift0=kernel(spec.d_drift0),
        d_run_cost0=kernel(spec.d_run_cost0),
        diffusion_floor=spec.diffusion_floor - half_var,
        sigma0=0.0,
    )


def shift_control(
    gamma: npt.ArrayLike,
    wpath: NoisePath,
    sigma0: float,
    g: Grid,
    *,
    inverse: bool = False,
) -> FloatArray:
    """
    Move a control field between original and shifted coordinates.

    Forward: gamma~(t_k, x) = gamma(t_k, x + sigma0 W_k); inverse uses x - sigma0 W_k. Values
    are linearly interpolated in x and held constant beyond the end nodes, so they stay in G.
    """
    _check_noise(wpath, g)
    arr = g.check_path(gamma, g.n_t, "control")
    sign = -1.0 if inverse else 1.0
    out = np.empty_like(arr)
    for k in range(g.n_t):
        out[k] = np.interp(g.nodes + sign * sigma0 * wpath.values[k], g.nodes, arr[k])
    return out
