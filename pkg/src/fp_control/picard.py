"""
Damped Picard iteration for the coupled forward Fokker-Planck / backward HJB system.

Each sweep extracts a (relaxed) control from the current value function, solves the forward
equation with it, re-solves the HJB against the new measure flow and blends the result into the
value function. The smoothing of the control is annealed along a schedule whose final entry is
normally 0 (bang-bang).
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, Field, field_validator

from fp_control.adjoint import AdjointPath, solve_adjoint, solve_hjb
from fp_control.forward import DensityPath, evaluate_cost, path_cost, solve_forward
from fp_control.grid import FloatArray, Grid
from fp_control.model import ModelSpec, constant_control
from fp_control.reports import ActiveInterval, CostComparisonReport, TrialCost
from fp_control.sensitivity import extract_control, random_smooth_direction, smp_residual

logger = logging.getLogger(__name__)

ACTIVE_TOL = 1e-12


class PicardOptions(BaseModel):
    """Iteration controls of ``picard_solve``."""

    max_iters: int = Field(200, ge=1, description="Maximum number of sweeps")
    tol: float = Field(1e-5, gt=0, description="Tolerance on the combined relative L² residual")
    damping: float = Field(0.5, gt=0, le=1, description="Weight theta of the new HJB solution")
    smoothing_schedule: list[float] = Field(
        default_factory=lambda: [0.1, 0.03, 0.01, 0.0],
        description="Annealed control smoothing, nonincreasing; 0 means bang-bang",
    )

    @field_validator("smoothing_schedule")
    @classmethod
    def _check_schedule(cls, v: list[float]) -> list[float]:
        if not v:
            raise ValueError("smoothing_schedule must not be empty")
        if any(s < 0 for s in v):
            raise ValueError("smoothing values must be nonnegative")
        if any(b > a for a, b in zip(v, v[1:])):
            raise ValueError("smoothing_schedule must be nonincreasing")
        return v


@dataclass(frozen=True)
class FbSolution:
    """
    Result of a Picard run.

    ``control`` is the bang-bang control extracted from the best iterate of the final stage,
    ``density`` its forward solution and ``adjoint`` the linear adjoint of that pair.
    ``final_stage_start`` is the index in ``residual_history`` at which the last smoothing stage
    began, or None if it was never reached.
    """

    density: DensityPath
    adjoint: AdjointPath
    control: FloatArray
    residual_history: FloatArray
    cost_history: FloatArray
    converged: bool
    cost: float
    iterations: int
    smp: float
    final_stage_start: int | None = None
    stage_history: list[int] = field(default_factory=list)


def _space_time_norm(slices: FloatArray, g: Grid) -> float:
    return float(np.sqrt(np.sum(slices**2) * g.dx * g.dt))


def _blend(new: AdjointPath, old: AdjointPath, theta: float) -> AdjointPath:
    def mix(a: FloatArray, b: FloatArray) -> FloatArray:
        return theta * a + (1.0 - theta) * b

    return AdjointPath(
        slices=mix(new.slices, old.slices),
        grad_slices=mix(new.grad_slices, old.grad_slices),
        control_grad_slices=mix(new.control_grad_slices, old.control_grad_slices),
        grid=new.grid,
    )


def _uncontrolled(spec: ModelSpec, g: Grid) -> FloatArray:
    return constant_control(float(np.clip(0.0, spec.g_min, spec.g_max)), g)


def _assemble(
    spec: ModelSpec,
    g: Grid,
    rho0: FloatArray,
    mu: DensityPath,
    **history,
) -> FbSolution:
    """Bang-bang control of the HJB solution against ``mu``, with its forward and adjoint paths."""
    control = extract_control(spec, solve_hjb(spec, mu, g), 0.0, g)
    density = solve_forward(spec, control, g, rho0)
    adjoint = solve_adjoint(spec, density, control, g)
    return FbSolution(
        density=density,
        adjoint=adjoint,
        control=control,
        cost=path_cost(spec, density, control),
        smp=smp_residual(spec, density, adjoint, control, g),
        **history,
    )


def picard_solve(
    spec: ModelSpec, g: Grid, rho0: npt.ArrayLike, opts: PicardOptions | None = None
) -> FbSolution:
    """
    Iterate the forward-backward system to a fixed point.

    A smoothing stage ends once the residual drops to ``tol``. The run is converged when that
    happens in the final stage, or earlier if the bang-bang control of the current value
    function already equals the control in use. Non-convergence is reported through the flag.
    """
    opts = opts or PicardOptions()
    rho = g.check(rho0, "rho0")
    schedule = opts.smoothing_schedule
    last_stage = len(schedule) - 1

    mu = solve_forward(spec, _uncontrolled(spec, g), g, rho)
    u = solve_hjb(spec, mu, g)
    mu_scale = max(_space_time_norm(mu.slices, g), np.finfo(float).tiny)

    residuals: list[float] = []
    costs: list[float] = []
    stages: list[int] = []
    stage = 0
    final_stage_start = 0 if last_stage == 0 else None
    converged = False
    best: tuple[float, DensityPath] | None = None

    for it in range(1, opts.max_iters + 1):
        gamma = extract_control(spec, u, schedule[stage], g)
        mu_new = solve_forward(spec, gamma, g, rho)
        u_new = _blend(solve_hjb(spec, mu_new, g), u, opts.damping)

        u_scale = max(_space_time_norm(u.slices, g), np.finfo(float).tiny)
        residual = (
            _space_time_norm(u_new.slices - u.slices, g) / u_scale
            + _space_time_norm(mu_new.slices - mu.slices, g) / mu_scale
        )
        cost = path_cost(spec, mu_new, gamma)
        residuals.append(residual)
        costs.append(cost)
        stages.append(stage)
        logger.debug(
            "Picard %d (stage %d, smoothing %g): residual %.3e, cost %.8f",
            it,
            stage,
            schedule[stage],
            residual,
            cost,
        )
        if not np.isfinite(residual):
            logger.warning("Picard residual is not finite at iteration %d; stopping", it)
            break

        if stage == last_stage and (best is None or residual <= best[0]):
            best = (residual, mu_new)
        u, mu = u_new, mu_new

        if residual <= opts.tol:
            if stage == last_stage:
                converged = True
                break
            hard = extract_control(spec, u, 0.0, g)
            if float(np.max(np.abs(hard - gamma))) <= opts.tol:
                best = (residual, mu_new)
                converged = True
                break
            stage += 1
            if stage == last_stage:
                final_stage_start = len(residuals)
            logger.debug("Picard stage %d begins (smoothing %g)", stage, schedule[stage])

    if best is None:
        best = (residuals[-1] if residuals else float("inf"), mu)
    if not converged:
        logger.warning(
            "Picard did not converge in %d iterations (last residual %.3e)",
            len(residuals),
            residuals[-1] if residuals else float("nan"),
        )

    sol = _assemble(
        spec,
        g,
        rho,
        best[1],
        residual_history=np.asarray(residuals),
        cost_history=np.asarray(costs),
        converged=converged,
        iterations=len(residuals),
        final_stage_start=final_stage_start,
        stage_history=stages,
    )
    logger.info(
        "Picard '%s': converged=%s after %d iterations, cost %.8f, smp residual %.3e",
        spec.name,
        sol.converged,
        sol.iterations,
        sol.cost,
        sol.smp,
    )
    return sol


def extra_sweep(
    sol: FbSolution,
    spec: ModelSpec,
    g: Grid,
    rho0: npt.ArrayLike,
    opts: PicardOptions | None = None,
) -> FbSolution:
    """One more damped bang-bang sweep starting from ``sol``."""
    opts = opts or PicardOptions()
    rho = g.check(rho0, "rho0")
    mu = solve_forward(spec, sol.control, g, rho)
    u = _blend(solve_hjb(spec, mu, g), sol.adjoint, opts.damping)
    gamma = extract_control(spec, u, 0.0, g)
    density = solve_forward(spec, gamma, g, rho)
    adjoint = solve_adjoint(spec, density, gamma, g)
    residual = _space_time_norm(u.slices - sol.adjoint.slices, g) / max(
        _space_time_norm(sol.adjoint.slices, g), np.finfo(float).tiny
    )
    cost = path_cost(spec, density, gamma)
    return FbSolution(
        density=density,
        adjoint=adjoint,
        control=gamma,
        residual_history=np.append(sol.residual_history, residual),
        cost_history=np.append(sol.cost_history, cost),
        converged=sol.converged,
        cost=cost,
        iterations=sol.iterations + 1,
        smp=smp_residual(spec, density, adjoint, gamma, g),
        final_stage_start=sol.final_stage_start,
        stage_history=[*sol.stage_history, len(opts.smoothing_schedule) - 1],
    )


def restep_residual(sol: FbSolution, spec: ModelSpec, g: Grid, rho0: npt.ArrayLike) -> float:
    """
    Combined relative residual of one undamped bang-bang re-step from ``sol``.

    The value function is re-solved against ``sol.density``, its bang-bang control is pushed
    forward and the HJB is solved once more against the new flow. The result is measured the same
    way as the residuals of ``picard_solve``.
    """
    rho = g.check(rho0, "rho0")
    u = solve_hjb(spec, sol.density, g)
    mu = solve_forward(spec, extract_control(spec, u, 0.0, g), g, rho)
    u_next = solve_hjb(spec, mu, g)
    tiny = np.finfo(float).tiny
    return _space_time_norm(u_next.slices - u.slices, g) / max(
        _space_time_norm(u.slices, g), tiny
    ) + _space_time_norm(mu.slices - sol.density.slices, g) / max(
        _space_time_norm(sol.density.slices, g), tiny
    )


def _random_bang_bang(spec: ModelSpec, g: Grid, seed: int) -> FloatArray:
    field_ = random_smooth_direction(g, seed).values
    rng = np.random.default_rng(seed)
    level = rng.uniform(-0.5, 0.5)
    return np.where(field_ > level, spec.g_max, spec.g_min)


def cost_comparison(
    sol: FbSolution,
    spec: ModelSpec,
    g: Grid,
    rho0: npt.ArrayLike,
    n_trials: int,
    seed: int,
) -> CostComparisonReport:
    """
    Cost of ``sol`` against random admissible controls, alternating bang-bang fields (thresholded
    smooth random fields) and constants drawn uniformly from G.
    """
    rho = g.check(rho0, "rho0")
    rng = np.random.default_rng(seed)
    trials: list[TrialCost] = []
    for i in range(n_trials):
        if i % 2 == 0:
            gamma = _random_bang_bang(spec, g, seed + 1000 + i)
            kind = "bang-bang"
        else:
            gamma = constant_control(rng.uniform(spec.g_min, spec.g_max), g)
            kind = "constant"
        trials.append(TrialCost(kind=kind, cost=evaluate_cost(spec, gamma, g, rho)))

    margin = min((t.cost - sol.cost for t in trials), default=None)
    caveat = None
    if spec.is_measure_dependent:
        caveat = (
            "coefficients depend on the measure; the sufficient optimality condition does not "
            "apply and the margin is informational only"
        )
    if margin is not None:
        logger.info("Cost comparison over %d trials: margin %.3e", n_trials, margin)
    return CostComparisonReport(
        solution_cost=sol.cost, trials=trials, margin=margin, caveat=caveat
    )


def active_intervals(sol: FbSolution, spec: ModelSpec, g: Grid) -> list[ActiveInterval]:
    """Per time step, the extent of {control = g_max} and whether it is one node interval."""
    out = []
    for k in range(g.n_t):
        if spec.g_max > spec.g_min:
            idx = np.flatnonzero(sol.control[k] >= spec.g_max - ACTIVE_TOL)
        else:
            idx = np.array([], dtype=int)
        if idx.size == 0:
            out.append(ActiveInterval(t=float(g.times[k])))
            continue
        contiguous = bool(idx[-1] - idx[0] + 1 == idx.size)
        if not contiguous:
            logger.warning("Active set at t = %.4f is not a single interval", g.times[k])
        out.append(
            ActiveInterval(
                t=float(g.times[k]),
                a_t=float(g.nodes[idx[0]]),
                b_t=float(g.nodes[idx[-1]]),
                contiguous=contiguous,
            )
        )
    return out
