"""
Forward solver for the nonlinear random Fokker-Planck equation

    d rho/dt = lam rho - d(b rho)/dx + d²(a rho)/dx²,   b = b0 + slope * gamma,

with implicit diffusion, explicit flux-split upwind transport and an explicit zeroth-order
term. Nonlocal summaries are frozen at the start of each step.
"""

import logging
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy.stats import norm

from fp_control.core.errors import (
    CFLViolationError,
    InvalidArgumentError,
    NegativeInputError,
    ShiftOutOfDomainError,
    TimeGridMismatchError,
)
from fp_control.grid import FloatArray, Grid, NoisePath, boundary_mass, weighted_norm
from fp_control.model import (
    ModelSpec,
    control_direction,
    evaluate_coefficients,
    running_cost,
    terminal_cost_eval,
    validate_control,
)
from fp_control.stencils import (
    TransportSplit,
    diffusion_bands,
    solve_tridiagonal,
    upwind_divergence,
)

logger = logging.getLogger(__name__)

NEGATIVITY_TOL = 1e-10
BOUNDARY_WARN_FRACTION = 1e-6


@dataclass(frozen=True)
class DensityPath:
    """
    Density slices rho_{t_k}, k = 0..n_t, at the grid nodes.

    For solved densities the per-step diagnostics are filled in: ``mass`` (n_t + 1 values),
    ``killed`` = -dt <rho_k, lam_k> and ``leakage`` (mass leaving through the ends during step
    k), and ``weighted_norms``. Signed paths such as the variation V leave them as None.
    """

    slices: FloatArray
    grid: Grid
    mass: FloatArray | None = None
    killed: FloatArray | None = None
    leakage: FloatArray | None = None
    weighted_norms: FloatArray | None = None

    @property
    def terminal(self) -> FloatArray:
        return self.slices[-1]


@dataclass(frozen=True)
class _StepResult:
    rho: FloatArray
    killed: float
    leakage: float


def gaussian_density(g: Grid, mean: float, sd: float) -> FloatArray:
    """Normal density N(mean, sd²) at the nodes."""
    return norm.pdf(g.nodes, loc=mean, scale=sd)


def _advance(
    rho: FloatArray, spec: ModelSpec, gamma_slice: FloatArray, t: float, g: Grid
) -> _StepResult:
    c = evaluate_coefficients(spec, t, rho, g)
    b1 = c.slope * gamma_slice
    split = TransportSplit.build(c.drift0, control_direction(spec, c.slope, gamma_slice))
    v_pos, v_neg = split.velocities(c.drift0, b1)

    cfl = g.dt * float(np.max(v_pos - v_neg)) / g.dx
    if cfl > 1.0:
        raise CFLViolationError(
            f"CFL number {cfl:.3f} > 1 at t = {t:.6g}; reduce dt or refine less in space"
        )

    div, outflow = upwind_divergence(v_pos, v_neg, rho, g.dx)
    explicit = rho + g.dt * (c.lam * rho - div)
    rho_next = solve_tridiagonal(diffusion_bands(c.diffusion, g.dx, g.dt), explicit)

    killed = -g.dt * float(np.dot(c.lam, rho)) * g.dx
    diffusion_loss = (float(explicit.sum()) - float(rho_next.sum())) * g.dx
    return _StepResult(rho=rho_next, killed=killed, leakage=g.dt * outflow + diffusion_loss)


def step_forward(
    rho: npt.ArrayLike, spec: ModelSpec, gamma_slice: npt.ArrayLike, t: float, g: Grid
) -> FloatArray:
    """
    Advance a nonnegative density by one time step.

    Raises:
        NegativeInputError: if rho has negative entries.
        ControlOutOfRangeError: if gamma_slice leaves G.
        CFLViolationError: if dt * max|b| / dx > 1.
        SingularSystemError: if the implicit diffusion solve fails.
    """
    rho_a = g.check(rho, "rho")
    gam = g.check(gamma_slice, "gamma_slice")
    scale = max(float(np.max(np.abs(rho_a))), np.finfo(float).tiny)
    if np.min(rho_a) < -NEGATIVITY_TOL * scale:
        raise NegativeInputError(f"density has a negative entry ({np.min(rho_a):.3e})")
    validate_control(np.broadcast_to(gam, (g.n_t, g.n_x)), spec, g)
    return _advance(rho_a, spec, gam, t, g).rho


def _require_random_equation(spec: ModelSpec) -> None:
    if spec.sigma0 != 0:
        raise InvalidArgumentError(
            f"model '{spec.name}' has sigma0 = {spec.sigma0:g}; shift it along a noise path "
            "with shift_model before solving"
        )


def solve_forward(
    spec: ModelSpec, gamma: npt.ArrayLike, g: Grid, rho0: npt.ArrayLike
) -> DensityPath:
    """
    Solve the forward equation on [0, T] for the control field gamma (n_t x n_x).

    Raises:
        NegativeInputError: if rho0 is negative or a step produces a density below
            -1e-10 * max(rho0).
        plus the step errors of ``step_forward``.
    """
    _require_random_equation(spec)
    gam = validate_control(gamma, spec, g)
    rho = g.check(rho0, "rho0").copy()
    if np.any(rho < 0):
        raise NegativeInputError("initial density has negative entries")

    threshold = -NEGATIVITY_TOL * float(rho.max(initial=0.0))
    slices = np.empty((g.n_t + 1, g.n_x))
    slices[0] = rho
    killed = np.empty(g.n_t)
    leakage = np.empty(g.n_t)
    for k in range(g.n_t):
        step = _advance(slices[k], spec, gam[k], g.times[k], g)
        if step.rho.min() < threshold:
            raise NegativeInputError(
                f"density became negative ({step.rho.min():.3e}) at step {k + 1}"
            )
        slices[k + 1] = step.rho
        killed[k] = step.killed
        leakage[k] = step.leakage

    mass = slices.sum(axis=1) * g.dx
    norms = np.sqrt((slices**2 * g.weights).sum(axis=1) * g.dx)
    left, right = boundary_mass(slices[-1], g)
    if left + right > BOUNDARY_WARN_FRACTION * max(mass[0], np.finfo(float).tiny):
        logger.warning(
            "Boundary mass at T is %.3e (left) / %.3e (right); the domain may be too narrow",
            left,
            right,
        )
    logger.info(
        "Forward solve '%s': n_x=%d n_t=%d, mass %.6f -> %.6f, leakage %.3e",
        spec.name,
        g.n_x,
        g.n_t,
        mass[0],
        mass[-1],
        leakage.sum(),
    )
    return DensityPath(
        slices=slices,
        grid=g,
        mass=mass,
        killed=killed,
        leakage=leakage,
        weighted_norms=norms,
    )


def mass_and_loss(path: DensityPath) -> tuple[FloatArray, FloatArray]:
    """
    Mass <mu_t, 1> and cumulative loss L_t = -int_0^t <mu_s, lam> ds at the time nodes.

    The loss uses the left-endpoint rule, matching the explicit killing term of the scheme.
    """
    if path.mass is None or path.killed is None:
        raise InvalidArgumentError("mass_and_loss needs a path produced by solve_forward")
    loss = np.concatenate(([0.0], np.cumsum(path.killed)))
    return path.mass.copy(), loss


def mass_identity_defect(path: DensityPath) -> tuple[FloatArray, FloatArray]:
    """
    Per-step |(m_{k+1} - m_k)/dt - <mu_k, lam_k>| and the boundary leakage rate.

    The scheme satisfies the discrete balance up to the leakage, so the defect is bounded by
    the leakage rate plus roundoff.
    """
    if path.mass is None or path.killed is None or path.leakage is None:
        raise InvalidArgumentError("mass_identity_defect needs a path produced by solve_forward")
    dt = path.grid.dt
    defect = np.abs(np.diff(path.mass) / dt + path.killed / dt)
    return defect, path.leakage / dt


def check_mass_identity(path: DensityPath) -> float:
    """Largest per-step balance error once the recorded leakage is accounted for (roundoff)."""
    if path.mass is None or path.killed is None or path.leakage is None:
        raise InvalidArgumentError("check_mass_identity needs a path produced by solve_forward")
    balance = (np.diff(path.mass) + path.killed + path.leakage) / path.grid.dt
    return float(np.max(np.abs(balance), initial=0.0))


def path_cost(spec: ModelSpec, path: DensityPath, gamma: npt.ArrayLike) -> float:
    """Left-endpoint cost sum_k dt <mu_k, f(t_k, ., gamma_k)> + psi(mu_T) of a solved path."""
    g = path.grid
    gam = g.check_path(gamma, g.n_t, "control")
    running = sum(
        running_cost(spec, g.times[k], path.slices[k], gam[k], g) for k in range(g.n_t)
    )
    return g.dt * running + terminal_cost_eval(spec, path.terminal, g)


def evaluate_cost(
    spec: ModelSpec, gamma: npt.ArrayLike, g: Grid, rho0: npt.ArrayLike
) -> float:
    """Cost functional of the random equation for the control field gamma."""
    return path_cost(spec, solve_forward(spec, gamma, g, rho0), gamma)


def _shift_slice(rho: FloatArray, shift: float, dx: float) -> FloatArray:
    """
    Move node masses by ``shift``, splitting each between the two nearest nodes.

    Shares that would land beyond either end are kept on the end node, so the slice total is
    unchanged.
    """
    q = shift / dx
    m = int(np.floor(q))
    frac = q - m
    out = np.zeros_like(rho)
    source = np.arange(rho.size)
    for offset, share in ((m, 1.0 - frac), (m + 1, frac)):
        if share == 0.0:
            continue
        np.add.at(out, np.clip(source + offset, 0, rho.size - 1), share * rho)
    return out


def pushforward(
    path: DensityPath,
    wpath: NoisePath,
    sigma0: float,
    *,
    margin: float | None = None,
) -> DensityPath:
    """
    Push each slice forward along x -> x + sigma0 W_t.

    The shift deposits every node mass linearly onto its two neighbours and keeps anything
    pushed past an end on the end node. Mass is preserved exactly; the first moment is
    preserved as long as nothing reaches the ends.

    Raises:
        TimeGridMismatchError: if the noise path does not match the time grid.
        ShiftOutOfDomainError: if |sigma0 W_t| exceeds ``margin`` (default: a quarter of the
            domain length).
    """
    g = path.grid
    if np.shape(wpath.values) != (g.n_t + 1,):
        raise TimeGridMismatchError(
            f"noise path has {np.size(wpath.values)} samples, grid expects {g.n_t + 1}"
        )
    limit = 0.25 * (g.x_max - g.x_min) if margin is None else margin
    shifts = sigma0 * np.asarray(wpath.values, dtype=np.float64)
    worst = float(np.max(np.abs(shifts)))
    if worst > limit:
        raise ShiftOutOfDomainError(f"shift {worst:.3f} exceeds the margin {limit:.3f}")

    slices = np.stack([_shift_slice(path.slices[k], shifts[k], g.dx) for k in range(g.n_t + 1)])
    return DensityPath(
        slices=slices,
        grid=g,
        mass=slices.sum(axis=1) * g.dx,
        killed=None if path.killed is None else path.killed.copy(),
        leakage=None if path.leakage is None else path.leakage.copy(),
        weighted_norms=np.array([weighted_norm(s, g) for s in slices]),
    )
