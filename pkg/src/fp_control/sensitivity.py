"""
First-order sensitivities of the cost functional with respect to the control.

- ``solve_variation``: linearised forward equation for a perturbation direction h
- ``gateaux_adjoint``: directional derivative through the adjoint path
- ``gateaux_fd``: finite-difference oracle built from two forward solves
- ``smp_residual`` / ``extract_control``: pointwise minimum condition of the control Hamiltonian
"""

import logging
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from fp_control.adjoint import AdjointPath, solve_adjoint
from fp_control.core.errors import (
    DimensionMismatchError,
    InadmissiblePerturbationError,
    InvalidArgumentError,
)
from fp_control.forward import DensityPath, evaluate_cost, solve_forward
from fp_control.grid import FloatArray, Grid
from fp_control.model import (
    CONTROL_TOL,
    ModelSpec,
    control_direction,
    evaluate_coefficients,
    hamiltonian_h1,
    kernel_matrix,
    minimize_h1,
    relaxed_minimizer,
    terminal_adjoint,
    validate_control,
)
from fp_control.reports import GradientCheckReport, GradientCheckSummary
from fp_control.stencils import (
    TransportSplit,
    diffusion_bands,
    solve_tridiagonal,
    upwind_divergence,
)

logger = logging.getLogger(__name__)

GRADIENT_RTOL = 1e-2
GRADIENT_ATOL = 1e-6


@dataclass(frozen=True)
class Direction:
    """Perturbation h of a control field (n_t x n_x) with sup-norm ``bound``."""

    values: FloatArray
    bound: float

    @classmethod
    def from_values(cls, values: npt.ArrayLike) -> "Direction":
        arr = np.asarray(values, dtype=np.float64)
        return cls(values=arr, bound=float(np.max(np.abs(arr), initial=0.0)))

    def eps_max(self, gamma: npt.ArrayLike, spec: ModelSpec) -> float:
        """Largest eps with gamma + eps' h in G for every eps' in [0, eps]; inf when h = 0."""
        gam = np.asarray(gamma, dtype=np.float64)
        h = self.values
        up = h > 0
        down = h < 0
        limits = np.concatenate(
            ((spec.g_max - gam[up]) / h[up], (spec.g_min - gam[down]) / h[down])
        )
        if limits.size == 0:
            return float("inf")
        return float(max(limits.min(), 0.0))


def _check_direction(h: Direction, g: Grid) -> FloatArray:
    if h.values.shape != (g.n_t, g.n_x):
        raise DimensionMismatchError(
            f"direction has shape {h.values.shape}, expected ({g.n_t}, {g.n_x})"
        )
    return h.values


def random_smooth_direction(
    g: Grid, seed: int, amplitude: float = 1.0, n_modes: int = 3
) -> Direction:
    """
    Smooth random field sum a_mn cos(m pi t / T) sin(n pi (x - x_min) / L), scaled so that its
    sup-norm equals ``amplitude``.
    """
    rng = np.random.default_rng(seed)
    coeffs = rng.standard_normal((n_modes, n_modes))
    t = g.times[:-1] / g.t_horizon
    x = (g.nodes - g.x_min) / (g.x_max - g.x_min)
    m = np.arange(n_modes)
    n = np.arange(1, n_modes + 1)
    time_basis = np.cos(np.pi * np.outer(t, m))
    space_basis = np.sin(np.pi * np.outer(n, x))
    values = time_basis @ coeffs @ space_basis
    peak = float(np.max(np.abs(values)))
    if peak > 0:
        values *= amplitude / peak
    return Direction.from_values(values)


def random_interior_control(spec: ModelSpec, g: Grid, seed: int) -> FloatArray:
    """Smooth control with values in the middle 60% of G."""
    shape = random_smooth_direction(g, seed, amplitude=0.3).values
    return spec.g_min + (spec.g_max - spec.g_min) * (0.5 + shape)


def solve_variation(
    spec: ModelSpec, mu: DensityPath, gamma: npt.ArrayLike, h: Direction, g: Grid
) -> DensityPath:
    """
    Linearised forward equation for the perturbation gamma + eps h, with V_0 = 0.

    The step linearises ``forward._advance`` around mu with the same upwind masks: the source is
    the transport of mu by slope * h, and the nonlocal coefficients couple V back through the
    kernels d_lambda and d_drift0.
    """
    gam = validate_control(gamma, spec, g)
    hv = _check_direction(h, g)
    mu_slices = g.check_path(mu.slices, g.n_t + 1, "density path")

    slices = np.zeros((g.n_t + 1, g.n_x))
    for k in range(g.n_t):
        t = g.times[k]
        rho = mu_slices[k]
        v = slices[k]
        c = evaluate_coefficients(spec, t, rho, g)
        split = TransportSplit.build(c.drift0, control_direction(spec, c.slope, gam[k]))

        d_lam = np.zeros(g.n_x)
        if spec.d_lambda is not None:
            d_lam = kernel_matrix(spec.d_lambda, t, c.summaries, g) @ v * g.dx
        d_b0 = np.zeros(g.n_x)
        if spec.d_drift0 is not None:
            d_b0 = kernel_matrix(spec.d_drift0, t, c.summaries, g) @ v * g.dx

        v_pos, v_neg = split.velocities(c.drift0, c.slope * gam[k])
        div_v, _ = upwind_divergence(v_pos, v_neg, v, g.dx)
        dv_pos, dv_neg = split.velocities(d_b0, c.slope * hv[k])
        div_src, _ = upwind_divergence(dv_pos, dv_neg, rho, g.dx)

        explicit = v + g.dt * (c.lam * v + d_lam * rho - div_v - div_src)
        slices[k + 1] = solve_tridiagonal(diffusion_bands(c.diffusion, g.dx, g.dt), explicit)

    return DensityPath(slices=slices, grid=g)


def variation_cost_derivative(
    spec: ModelSpec,
    mu: DensityPath,
    variation: DensityPath,
    gamma: npt.ArrayLike,
    h: Direction,
    g: Grid,
) -> float:
    """
    Directional derivative assembled from the variation:

        sum_k dt [<V_k, f_k> + <mu_k, d_g f1 h_k> + <mu_k, Df0 V_k>] + <V_T, Dpsi(mu_T)>
    """
    gam = validate_control(gamma, spec, g)
    hv = _check_direction(h, g)
    x = g.nodes
    total = 0.0
    for k in range(g.n_t):
        t = g.times[k]
        rho = mu.slices[k]
        v = variation.slices[k]
        c = evaluate_coefficients(spec, t, rho, g)
        f = c.cost0 + np.asarray(spec.run_cost1(t, x, gam[k]), dtype=np.float64)
        df1 = np.asarray(spec.run_cost1_grad(t, x, gam[k]), dtype=np.float64) * hv[k]
        term = np.dot(v, f) + np.dot(rho, df1)
        if spec.d_run_cost0 is not None:
            term += np.dot(rho, kernel_matrix(spec.d_run_cost0, t, c.summaries, g) @ v * g.dx)
        total += g.dt * term * g.dx
    d_psi = terminal_adjoint(spec, mu.terminal, g)
    return float(total + np.dot(variation.terminal, d_psi) * g.dx)


def gateaux_adjoint(
    spec: ModelSpec,
    mu: DensityPath,
    u: AdjointPath,
    gamma: npt.ArrayLike,
    h: Direction,
    g: Grid,
) -> float:
    """
    sum_k dt <mu_k, (slope p_k + d_g f1(gamma_k)) h_k>, p_k the control gradient of u.

    For the bailout model the integrand is (du/dx + w) h.
    """
    gam = g.check_path(gamma, g.n_t, "control")
    hv = _check_direction(h, g)
    grads = g.check_path(u.control_grad_slices, g.n_t, "control gradients")
    x = g.nodes
    total = 0.0
    for k in range(g.n_t):
        t = g.times[k]
        slope = np.asarray(spec.drift1_slope(t, x), dtype=np.float64)
        df1 = np.asarray(spec.run_cost1_grad(t, x, gam[k]), dtype=np.float64)
        total += np.dot(mu.slices[k], (slope * grads[k] + df1) * hv[k])
    return float(total * g.dt * g.dx)


def _admissible(values: FloatArray, spec: ModelSpec) -> bool:
    return bool(
        values.min() >= spec.g_min - CONTROL_TOL and values.max() <= spec.g_max + CONTROL_TOL
    )


def _fd_derivative(
    spec: ModelSpec,
    gamma: FloatArray,
    hv: FloatArray,
    eps: float,
    g: Grid,
    rho0: FloatArray,
) -> tuple[float, str]:
    plus = gamma + eps * hv
    minus = gamma - eps * hv
    if _admissible(plus, spec) and _admissible(minus, spec):
        diff = evaluate_cost(spec, plus, g, rho0) - evaluate_cost(spec, minus, g, rho0)
        return diff / (2.0 * eps), "central"
    base = evaluate_cost(spec, gamma, g, rho0)
    if _admissible(plus, spec):
        return (evaluate_cost(spec, plus, g, rho0) - base) / eps, "forward"
    if _admissible(minus, spec):
        return (base - evaluate_cost(spec, minus, g, rho0)) / eps, "backward"
    raise InadmissiblePerturbationError(
        f"neither gamma + eps h nor gamma - eps h stays in G (eps = {eps:g})"
    )


def gateaux_fd(
    spec: ModelSpec,
    gamma: npt.ArrayLike,
    h: Direction,
    eps: float,
    g: Grid,
    rho0: npt.ArrayLike,
) -> float:
    """
    Finite-difference directional derivative of the cost.

    Central differences when gamma +/- eps h are both admissible (O(eps²) bias), otherwise the
    admissible one-sided quotient.

    Raises:
        InvalidArgumentError: if eps <= 0.
        InadmissiblePerturbationError: if both perturbed controls leave G.
    """
    if eps <= 0:
        raise InvalidArgumentError(f"eps must be positive, got {eps}")
    gam = validate_control(gamma, spec, g)
    hv = _check_direction(h, g)
    if not np.any(hv):
        return 0.0
    value, _ = _fd_derivative(spec, gam, hv, eps, g, g.check(rho0, "rho0"))
    return value


def smp_residual(
    spec: ModelSpec, mu: DensityPath, u: AdjointPath, gamma: npt.ArrayLike, g: Grid
) -> float:
    """sum_k dt <mu_k, H1(gamma_k) - min_G H1>, evaluated on the control gradient of u."""
    gam = validate_control(gamma, spec, g)
    grads = g.check_path(u.control_grad_slices, g.n_t, "control gradients")
    x = g.nodes
    total = 0.0
    for k in range(g.n_t):
        t = g.times[k]
        best = np.asarray(minimize_h1(spec, t, x, grads[k]), dtype=np.float64)
        gap = np.asarray(hamiltonian_h1(spec, t, x, grads[k], gam[k])) - np.asarray(
            hamiltonian_h1(spec, t, x, grads[k], best)
        )
        total += np.dot(mu.slices[k], np.maximum(gap, 0.0))
    return float(total * g.dt * g.dx)


def extract_control(spec: ModelSpec, u: AdjointPath, smoothing: float, g: Grid) -> FloatArray:
    """
    Control field minimising H1 node-wise on the control gradient of u.

    ``smoothing`` = 0 gives the bang-bang argmin (ties to g_max); a positive value gives the
    sigmoid relaxation between the two extreme points of G.
    """
    if smoothing < 0:
        raise InvalidArgumentError(f"smoothing must be nonnegative, got {smoothing}")
    grads = g.check_path(u.control_grad_slices, g.n_t, "control gradients")
    return np.stack(
        [relaxed_minimizer(spec, g.times[k], g.nodes, grads[k], smoothing) for k in range(g.n_t)]
    )


def gradient_check(
    spec: ModelSpec,
    gamma: npt.ArrayLike,
    h: Direction,
    g: Grid,
    rho0: npt.ArrayLike,
    eps: float = 1e-3,
) -> GradientCheckReport:
    """Compare gateaux_adjoint with the finite-difference oracle at eps and eps / 2."""
    if eps <= 0:
        raise InvalidArgumentError(f"eps must be positive, got {eps}")
    gam = validate_control(gamma, spec, g)
    hv = _check_direction(h, g)
    rho = g.check(rho0, "rho0")

    mu = solve_forward(spec, gam, g, rho)
    u = solve_adjoint(spec, mu, gam, g)
    adjoint_value = gateaux_adjoint(spec, mu, u, gam, h, g)
    fd_value, scheme = _fd_derivative(spec, gam, hv, eps, g, rho)
    fd_half, _ = _fd_derivative(spec, gam, hv, 0.5 * eps, g, rho)

    err = abs(adjoint_value - fd_value)
    report = GradientCheckReport(
        adjoint_value=adjoint_value,
        fd_value=fd_value,
        eps=eps,
        rel_err=err / max(abs(fd_value), 1e-12),
        fd_value_half_eps=fd_half,
        scheme=scheme,
        passed=err <= GRADIENT_RTOL * abs(fd_value) + GRADIENT_ATOL,
    )
    logger.info(
        "Gradient check: adjoint %.8e, fd %.8e (%s), rel_err %.3e",
        adjoint_value,
        fd_value,
        scheme,
        report.rel_err,
    )
    return report


def gradient_check_pairs(
    spec: ModelSpec,
    g: Grid,
    rho0: npt.ArrayLike,
    n_pairs: int,
    seed: int,
    eps: float = 1e-3,
) -> GradientCheckSummary:
    """Run ``gradient_check`` on ``n_pairs`` random smooth (gamma, h) pairs."""
    checks = []
    for i in range(n_pairs):
        gamma = random_interior_control(spec, g, seed + 2 * i)
        h = random_smooth_direction(g, seed + 2 * i + 1)
        checks.append(gradient_check(spec, gamma, h, g, rho0, eps))
    return GradientCheckSummary(
        checks=checks,
        max_rel_err=max((c.rel_err for c in checks), default=0.0),
        passed=all(c.passed for c in checks),
    )
