"""Space-time grid, weighted L² machinery, the flat distance and Brownian sampling."""

import logging
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
from scipy.optimize import linprog

from fp_control.core.errors import (
    DimensionMismatchError,
    InvalidArgumentError,
    NegativeInputError,
    SolverError,
)

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]


@dataclass(frozen=True)
class Grid:
    """
    Uniform 1-D mesh on [x_min, x_max] with n_x interior nodes and n_t time steps on [0, T].

    The two end points x_min and x_max are not nodes: they carry the homogeneous Dirichlet
    truncation of the real line. ``weights`` holds exp(eta0 * sqrt(1 + x_i^2)), the weight of
    the L²_η norm.
    """

    x_min: float
    x_max: float
    n_x: int
    t_horizon: float
    n_t: int
    eta0: float
    dx: float = field(init=False)
    dt: float = field(init=False)
    nodes: FloatArray = field(init=False, repr=False, compare=False)
    times: FloatArray = field(init=False, repr=False, compare=False)
    weights: FloatArray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        dx = (self.x_max - self.x_min) / (self.n_x + 1)
        dt = self.t_horizon / self.n_t
        nodes = self.x_min + dx * np.arange(1, self.n_x + 1)
        times = dt * np.arange(self.n_t + 1)
        weights = np.exp(self.eta0 * np.sqrt(1.0 + nodes**2))
        for arr in (nodes, times, weights):
            arr.flags.writeable = False
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "weights", weights)

    def check(self, f: npt.ArrayLike, name: str = "field") -> FloatArray:
        """Return ``f`` as a float array, raising if its length is not n_x."""
        arr = np.asarray(f, dtype=np.float64)
        if arr.shape != (self.n_x,):
            raise DimensionMismatchError(
                f"{name} has shape {arr.shape}, expected ({self.n_x},) for this grid"
            )
        return arr

    def check_path(self, values: npt.ArrayLike, rows: int, name: str) -> FloatArray:
        """Return ``values`` as a (rows, n_x) float array or raise."""
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != (rows, self.n_x):
            raise DimensionMismatchError(
                f"{name} has shape {arr.shape}, expected ({rows}, {self.n_x})"
            )
        return arr


@dataclass(frozen=True)
class NoisePath:
    """Sampled Brownian path W_{t_k}, k = 0..n_t, with W_0 = 0."""

    values: FloatArray
    seed: int

    def at(self, t: float, times: FloatArray) -> float:
        """Value of the path at time ``t`` (linear interpolation between samples)."""
        return float(np.interp(t, times, self.values))


def make_grid(
    x_min: float,
    x_max: float,
    n_x: int,
    t_horizon: float,
    n_t: int,
    eta0: float = 0.1,
) -> Grid:
    """
    Build a Grid after validating its parameters.

    Raises:
        InvalidArgumentError: if x_min >= x_max, n_x < 3, n_t < 1, t_horizon <= 0 or eta0 < 0.
    """
    if not x_min < x_max:
        raise InvalidArgumentError(f"x_min ({x_min}) must be smaller than x_max ({x_max})")
    if n_x < 3:
        raise InvalidArgumentError(f"n_x must be at least 3, got {n_x}")
    if n_t < 1:
        raise InvalidArgumentError(f"n_t must be at least 1, got {n_t}")
    if t_horizon <= 0:
        raise InvalidArgumentError(f"t_horizon must be positive, got {t_horizon}")
    if eta0 < 0:
        raise InvalidArgumentError(f"eta0 must be nonnegative, got {eta0}")
    return Grid(
        x_min=float(x_min),
        x_max=float(x_max),
        n_x=int(n_x),
        t_horizon=float(t_horizon),
        n_t=int(n_t),
        eta0=float(eta0),
    )


def weighted_norm(f: npt.ArrayLike, g: Grid) -> float:
    """Discrete L²_η norm: sqrt(sum f_i² exp(η(x_i)) dx)."""
    arr = g.check(f)
    return float(np.sqrt(np.sum(arr**2 * g.weights) * g.dx))


def weight_dual_norm(g: Grid) -> float:
    """Discrete L² norm of exp(-η/2) on the grid."""
    return float(np.sqrt(np.sum(1.0 / g.weights) * g.dx))


def pair(v: npt.ArrayLike, phi: npt.ArrayLike, g: Grid) -> float:
    """Duality pairing <v, phi> = sum v_i phi_i dx."""
    return float(np.dot(g.check(v, "v"), g.check(phi, "phi")) * g.dx)


def gradient_fd(f: npt.ArrayLike, g: Grid) -> FloatArray:
    """Central differences inside, one-sided differences at the two extreme nodes."""
    return np.gradient(g.check(f), g.dx)


def boundary_mass(f: npt.ArrayLike, g: Grid, width: int = 5) -> tuple[float, float]:
    """Mass carried by the ``width`` nodes closest to each end, as (left, right)."""
    arr = g.check(f)
    return float(np.sum(np.abs(arr[:width])) * g.dx), float(np.sum(np.abs(arr[-width:])) * g.dx)


def flat_distance(v1: npt.ArrayLike, v2: npt.ArrayLike, g: Grid) -> float:
    """
    Bounded Lipschitz distance between two nonnegative grid measures.

    Solves the dual linear program

        maximise   sum_i phi_i (v1_i - v2_i) dx
        subject to |phi_i| <= 1,  |phi_{i+1} - phi_i| <= dx

    with the HiGHS solver.

    Raises:
        DimensionMismatchError: if either field does not live on ``g``.
        NegativeInputError: if either field has a negative entry.
    """
    a = g.check(v1, "v1")
    b = g.check(v2, "v2")
    if np.any(a < 0) or np.any(b < 0):
        raise NegativeInputError("flat_distance expects nonnegative fields")
    diff = (a - b) * g.dx
    if not np.any(diff):
        return 0.0

    n = g.n_x
    # phi_{i+1} - phi_i <= dx and phi_i - phi_{i+1} <= dx
    rows = np.arange(n - 1)
    a_ub = np.zeros((2 * (n - 1), n))
    a_ub[rows, rows] = -1.0
    a_ub[rows, rows + 1] = 1.0
    a_ub[n - 1 + rows, rows] = 1.0
    a_ub[n - 1 + rows, rows + 1] = -1.0
    b_ub = np.full(2 * (n - 1), g.dx)

    result = linprog(-diff, A_ub=a_ub, b_ub=b_ub, bounds=(-1.0, 1.0), method="highs")
    if result.status != 0:
        raise SolverError(f"flat distance LP failed: {result.message}")
    return float(max(-result.fun, 0.0))


def sample_brownian(g: Grid, seed: int) -> NoisePath:
    """Sample W on the time grid: W_0 = 0 and i.i.d. N(0, dt) increments."""
    rng = np.random.default_rng(seed)
    increments = rng.standard_normal(g.n_t) * np.sqrt(g.dt)
    values = np.concatenate(([0.0], np.cumsum(increments)))
    return NoisePath(values=values, seed=seed)
