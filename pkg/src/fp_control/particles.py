"""
Monte Carlo simulation of the bailout McKean-Vlasov dynamics

    dX = (gamma(t, X) - kappa dL_t/dt) dt + sigma dB + sigma0 dW,   dLambda = hazard(X) dt,

with survival weights exp(-Lambda) (or hard killing by exponential clocks) and the default
fraction L_t = 1 - mean(weights_t).

Random numbers come from counter-based Philox streams keyed by (seed, step), so a run is
reproducible for a fixed seed and noise path regardless of how particles are processed.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass
from typing import Literal

import numpy as np
import numpy.typing as npt
import pandas as pd

from fp_control.core.errors import InvalidArgumentError, TimeGridMismatchError
from fp_control.grid import FloatArray, Grid, NoisePath, sample_brownian
from fp_control.model import BailoutParams, hazard_rate

logger = logging.getLogger(__name__)

KillingMode = Literal["weights", "clock"]
INITIAL_STREAM = 0


@dataclass(frozen=True)
class ParticleEnsemble:
    """
    State of n particles at time ``t``.

    ``weights`` is exp(-cum_intensity). ``alive`` is only set under clock killing; the
    measure of living particles then uses it instead of the weights.
    """

    t: float
    positions: FloatArray
    cum_intensity: FloatArray
    weights: FloatArray
    alive: npt.NDArray[np.bool_] | None = None

    @property
    def n(self) -> int:
        return int(self.positions.size)

    @property
    def mass_weights(self) -> FloatArray:
        if self.alive is None:
            return self.weights
        return self.alive.astype(np.float64)


@dataclass(frozen=True)
class ParticleTrajectory:
    """Per-step aggregates of one simulation, plus the recorded states when requested."""

    times: FloatArray
    mass: FloatArray
    loss: FloatArray
    mean_x: FloatArray
    running_cost: FloatArray
    final: ParticleEnsemble
    states: list[ParticleEnsemble] | None = None

    def particle_costs(self) -> FloatArray:
        """Per-particle cost: running injection cost plus the default indicator at T."""
        return self.running_cost + (1.0 - self.final.mass_weights)


def _stream(seed: int, counter: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed, counter]))


def _control_at(gamma_row: FloatArray, x: FloatArray, g: Grid, g_max: float) -> FloatArray:
    return np.clip(np.interp(x, g.nodes, gamma_row), 0.0, g_max)


def _weighted_mean(x: FloatArray, w: FloatArray) -> float:
    total = float(w.sum())
    return float(np.dot(w, x) / total) if total > 0 else float("nan")


def simulate(
    p: BailoutParams,
    gamma: npt.ArrayLike,
    wpath: NoisePath,
    n: int,
    seed: int,
    g: Grid,
    *,
    killing: KillingMode = "weights",
    hazard: Callable[[FloatArray], FloatArray] | None = None,
    keep_states: bool = False,
) -> ParticleTrajectory:
    """
    Euler-Maruyama simulation on the grid's time steps.

    The control is linear in space between nodes, constant beyond the end nodes and clipped to
    [0, g_max]; it is held constant on each time step. ``hazard`` replaces the bailout default
    intensity (used for closed-form checks).

    Raises:
        InvalidArgumentError: if n < 1 or the killing mode is unknown.
        TimeGridMismatchError: if the noise path is not sampled on the time grid or the
            horizon of ``p`` differs from the grid horizon.
    """
    if n < 1:
        raise InvalidArgumentError(f"n must be at least 1, got {n}")
    if killing not in ("weights", "clock"):
        raise InvalidArgumentError(f"unknown killing mode '{killing}'")
    if not np.isclose(p.T, g.t_horizon, rtol=1e-12, atol=0.0):
        raise TimeGridMismatchError(
            f"model horizon T={p.T} differs from grid horizon {g.t_horizon}"
        )
    gam = g.check_path(gamma, g.n_t, "control")
    if np.shape(wpath.values) != (g.n_t + 1,):
        raise TimeGridMismatchError(
            f"noise path has {np.size(wpath.values)} samples, grid expects {g.n_t + 1}"
        )
    rate = hazard or (lambda x: hazard_rate(x, p.hazard_max, p.hazard_scale))

    init = _stream(seed, INITIAL_STREAM)
    x = p.initial_mean + p.initial_sd * init.standard_normal(n)
    clocks = init.exponential(1.0, n) if killing == "clock" else None
    cum = np.zeros(n)
    weights = np.ones(n)
    alive = np.ones(n, dtype=bool) if clocks is not None else None
    running = np.zeros(n)

    def snapshot(k: int) -> ParticleEnsemble:
        return ParticleEnsemble(
            t=float(g.times[k]),
            positions=x.copy(),
            cum_intensity=cum.copy(),
            weights=weights.copy(),
            alive=None if alive is None else alive.copy(),
        )

    mass = np.empty(g.n_t + 1)
    loss = np.zeros(g.n_t + 1)
    mean_x = np.empty(g.n_t + 1)
    states = [snapshot(0)] if keep_states else None
    current = weights if alive is None else alive.astype(np.float64)
    mass[0] = current.mean()
    mean_x[0] = _weighted_mean(x, current)

    sqrt_dt = np.sqrt(g.dt)
    for k in range(g.n_t):
        control = _control_at(gam[k], x, g, p.g_max)
        running += g.dt * current * p.w_weight * control

        cum = cum + rate(x) * g.dt
        weights = np.exp(-cum)
        if clocks is not None:
            alive = alive & (cum < clocks)
            nxt = alive.astype(np.float64)
        else:
            nxt = weights
        d_loss = float(np.mean(current - nxt))

        noise = _stream(seed, k + 1).standard_normal(n)
        x = (
            x
            + control * g.dt
            + p.sigma * sqrt_dt * noise
            + p.sigma0 * (wpath.values[k + 1] - wpath.values[k])
            - p.kappa * d_loss
        )
        current = nxt
        loss[k + 1] = loss[k] + d_loss
        mass[k + 1] = current.mean()
        mean_x[k + 1] = _weighted_mean(x, current)
        if states is not None:
            states.append(snapshot(k + 1))

    logger.info(
        "Simulated %d particles (%s killing): L_T = %.6f", n, killing, float(loss[-1])
    )
    return ParticleTrajectory(
        times=g.times.copy(),
        mass=mass,
        loss=loss,
        mean_x=mean_x,
        running_cost=running,
        final=snapshot(g.n_t),
        states=states,
    )


def empirical_density(e: ParticleEnsemble, g: Grid) -> FloatArray:
    """
    Weighted histogram on the cells [x_i - dx/2, x_i + dx/2), divided by n dx.

    Particles outside the cells are dropped, so the mass is mean(weights) up to what left the
    grid.
    """
    edges = np.concatenate((g.nodes - 0.5 * g.dx, [g.nodes[-1] + 0.5 * g.dx]))
    counts, _ = np.histogram(e.positions, bins=edges, weights=e.mass_weights)
    return counts / (e.n * g.dx)


def estimate_cost(
    p: BailoutParams,
    gamma: npt.ArrayLike,
    n: int,
    n_paths: int,
    seed: int,
    g: Grid,
    *,
    killing: KillingMode = "weights",
) -> tuple[float, float]:
    """
    Monte Carlo estimate of E[int e^{-Lambda_t} w gamma_t dt + L_T] and its standard error.

    With one path the error is the particle standard error; with several, common-noise paths
    are sampled when sigma0 > 0 and the error is taken across per-path means.

    Raises:
        InvalidArgumentError: if n or n_paths is below 1.
    """
    if n < 1 or n_paths < 1:
        raise InvalidArgumentError(f"n and n_paths must be at least 1, got {n}, {n_paths}")
    zero_path = NoisePath(values=np.zeros(g.n_t + 1), seed=seed)
    path_means = []
    for j in range(n_paths):
        wpath = sample_brownian(g, seed + 10_000 + j) if p.sigma0 > 0 else zero_path
        costs = simulate(p, gamma, wpath, n, seed + j, g, killing=killing).particle_costs()
        if n_paths == 1:
            se = float(np.std(costs, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
            return float(costs.mean()), se
        path_means.append(costs.mean())
    means = np.asarray(path_means)
    return float(means.mean()), float(np.std(means, ddof=1) / np.sqrt(n_paths))


def summary_frame(traj: ParticleTrajectory) -> pd.DataFrame:
    """Columns t, mass, L, mean_X."""
    return pd.DataFrame(
        {"t": traj.times, "mass": traj.mass, "L": traj.loss, "mean_X": traj.mean_x}
    )


def states_frame(traj: ParticleTrajectory) -> pd.DataFrame:
    """Long-format recorded states: one row per (t, particle)."""
    if traj.states is None:
        raise InvalidArgumentError("trajectory was simulated without keep_states=True")
    frames = [
        pd.DataFrame(
            {
                "t": e.t,
                "particle": np.arange(e.n),
                "x": e.positions,
                "cum_intensity": e.cum_intensity,
                "weight": e.mass_weights,
            }
        )
        for e in traj.states
    ]
    return pd.concat(frames, ignore_index=True)
