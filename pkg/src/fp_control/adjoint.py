"""
Backward solvers: the linear adjoint equation and the semilinear HJB equation.

One backward step from t_{k+1} to t_k first applies the implicit diffusion (Neumann ends) to
u_{k+1}, giving u_bar, and then adds dt * DH evaluated on u_bar with the measure at t_k. The
transport gradients are the one-sided differences that transpose the upwind divergence of the
forward step, so the step is the exact adjoint of ``forward._advance`` away from the two end rows.
"""

import logging
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from fp_control.core.errors import CFLViolationError
from fp_control.forward import DensityPath
from fp_control.grid import FloatArray, Grid, gradient_fd
from fp_control.model import (
    ModelSpec,
    StepCoefficients,
    control_direction,
    evaluate_coefficients,
    minimize_h1,
    nonlocal_bracket,
    terminal_adjoint,
    validate_control,
)
from fp_control.stencils import TransportSplit, diffusion_bands, solve_tridiagonal

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdjointPath:
    """
    Adjoint slices u_{t_k}, k = 0..n_t.

    ``grad_slices`` holds the centred gradient of every slice. ``control_grad_slices`` (n_t rows)
    holds, for step k, the one-sided gradient that multiplies the control part of the drift in
    the backward step; the control Hamiltonian is always evaluated on it.
    """

    slices: FloatArray
    grad_slices: FloatArray
    control_grad_slices: FloatArray
    grid: Grid

    @property
    def initial(self) -> FloatArray:
        return self.slices[0]


@dataclass(frozen=True)
class _BackwardStep:
    u: FloatArray
    control_grad: FloatArray
    gamma: FloatArray


def _check_cfl(split: TransportSplit, c: StepCoefficients, b1: FloatArray, g: Grid) -> None:
    v_pos, v_neg = split.velocities(c.drift0, b1)
    cfl = g.dt * float(np.max(v_pos - v_neg)) / g.dx
    if cfl > 1.0:
        raise CFLViolationError(f"CFL number {cfl:.3f} > 1 at t = {c.t:.6g} in the backward step")


def _retreat(
    u_next: FloatArray,
    spec: ModelSpec,
    mu_slice: FloatArray,
    gamma_slice: FloatArray | None,
    t: float,
    g: Grid,
) -> _BackwardStep:
    """
    Backward step. With ``gamma_slice`` None the control minimises H1 node-wise on the lagged
    transport gradient (HJB step).
    """
    c = evaluate_coefficients(spec, t, mu_slice, g)
    u_bar = solve_tridiagonal(diffusion_bands(c.diffusion, g.dx, g.dt, adjoint=True), u_next)

    if gamma_slice is None:
        # the direction only depends on gamma when G straddles zero; one refinement pass
        trial = np.full(g.n_x, spec.g_max)
        split = TransportSplit.build(c.drift0, control_direction(spec, c.slope, trial))
        p0, p1 = split.gradients(u_bar, g.dx)
        gamma = np.asarray(minimize_h1(spec, t, g.nodes, p1), dtype=np.float64)
        if spec.g_min < 0 < spec.g_max:
            split = TransportSplit.build(c.drift0, control_direction(spec, c.slope, gamma))
            p0, p1 = split.gradients(u_bar, g.dx)
            gamma = np.asarray(minimize_h1(spec, t, g.nodes, p1), dtype=np.float64)
    else:
        gamma = gamma_slice
        split = TransportSplit.build(c.drift0, control_direction(spec, c.slope, gamma))
        p0, p1 = split.gradients(u_bar, g.dx)

    b1 = c.slope * gamma
    _check_cfl(split, c, b1, g)
    dh = (
        c.lam * u_bar
        + c.drift0 * p0
        + b1 * p1
        + c.cost0
        + np.asarray(spec.run_cost1(t, g.nodes, gamma), dtype=np.float64)
        + nonlocal_bracket(spec, c, mu_slice, u_bar, p0, g)
    )
    return _BackwardStep(u=u_bar + g.dt * dh, control_grad=p1, gamma=gamma)


def step_backward(
    u_next: npt.ArrayLike,
    spec: ModelSpec,
    mu_slice: npt.ArrayLike,
    gamma_slice: npt.ArrayLike,
    t: float,
    g: Grid,
) -> FloatArray:
    """
    One backward step of the linear adjoint equation for a given control slice.

    Raises:
        DimensionMismatchError: if a field does not live on ``g``.
        CFLViolationError: if dt * max|b| / dx > 1.
    """
    u_a = g.check(u_next, "u_next")
    mu_a = g.check(mu_slice, "mu_slice")
    gam = g.check(gamma_slice, "gamma_slice")
    return _retreat(u_a, spec, mu_a, gam, t, g).u


def _backward_sweep(
    spec: ModelSpec, mu: DensityPath, gamma: FloatArray | None, g: Grid
) -> tuple[AdjointPath, FloatArray]:
    mu_slices = g.check_path(mu.slices, g.n_t + 1, "density path")
    slices = np.empty((g.n_t + 1, g.n_x))
    control_grads = np.empty((g.n_t, g.n_x))
    controls = np.empty((g.n_t, g.n_x))
    slices[-1] = terminal_adjoint(spec, mu_slices[-1], g)
    for k in range(g.n_t - 1, -1, -1):
        step = _retreat(
            slices[k + 1],
            spec,
            mu_slices[k],
            None if gamma is None else gamma[k],
            g.times[k],
            g,
        )
        slices[k] = step.u
        control_grads[k] = step.control_grad
        controls[k] = step.gamma
    grads = np.stack([gradient_fd(s, g) for s in slices])
    path = AdjointPath(
        slices=slices, grad_slices=grads, control_grad_slices=control_grads, grid=g
    )
    return path, controls


def solve_adjoint(
    spec: ModelSpec, mu: DensityPath, gamma: npt.ArrayLike, g: Grid
) -> AdjointPath:
    """
    Solve the linear adjoint equation backward from u_T = Dpsi(mu_T) for a fixed control.

    Raises:
        DimensionMismatchError, ControlOutOfRangeError: on bad inputs.
        CFLViolationError, SingularSystemError: from the steps.
    """
    gam = validate_control(gamma, spec, g)
    path, _ = _backward_sweep(spec, mu, gam, g)
    logger.info(
        "Adjoint solve '%s': u_0 in [%.6f, %.6f]", spec.name, path.initial.min(), path.initial.max()
    )
    return path


def solve_hjb(spec: ModelSpec, mu: DensityPath, g: Grid) -> AdjointPath:
    """
    Solve the semilinear HJB equation for a frozen measure flow ``mu``.

    The control terms of DH are replaced by their minimum over G, taken node-wise on the
    gradient of the implicitly diffused u_{k+1}.
    """
    path, controls = _backward_sweep(spec, mu, None, g)
    active = float(np.mean(controls != spec.g_min)) if spec.g_max > spec.g_min else 0.0
    logger.info(
        "HJB solve '%s': u_0 in [%.6f, %.6f], control away from g_min on %.1f%% of nodes",
        spec.name,
        path.initial.min(),
        path.initial.max(),
        100.0 * active,
    )
    return path
