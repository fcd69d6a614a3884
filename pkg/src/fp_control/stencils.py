"""
Finite-difference building blocks shared by the forward, backward and variation solvers.

The backward operators are transposes of the forward ones in the interior: the implicit
diffusion matrix of the adjoint is the transpose of the forward one (Neumann rows at the ends
instead of Dirichlet), and the upwind transport of the adjoint is the transpose of the
flux-split upwind divergence.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

from fp_control.core.errors import SingularSystemError
from fp_control.grid import FloatArray


def diffusion_bands(a: FloatArray, dx: float, dt: float, *, adjoint: bool = False) -> FloatArray:
    """
    Banded form (for ``solve_banded((1, 1), ...)``) of I - dt * D.

    Forward: D rho = d²(a rho)/dx² with zero Dirichlet data beyond the end nodes.
    Adjoint: D u = a d²u/dx² with homogeneous Neumann ends, so constants are preserved.
    """
    r = dt / dx**2
    ab = np.zeros((3, a.size))
    ab[1] = 1.0 + 2.0 * r * a
    if adjoint:
        ab[0, 1:] = -r * a[:-1]
        ab[2, :-1] = -r * a[1:]
        ab[1, 0] = 1.0 + r * a[0]
        ab[1, -1] = 1.0 + r * a[-1]
    else:
        ab[0, 1:] = -r * a[1:]
        ab[2, :-1] = -r * a[:-1]
    return ab


def solve_tridiagonal(ab: FloatArray, rhs: FloatArray) -> FloatArray:
    """Solve the banded tridiagonal system, raising SingularSystemError on failure."""
    try:
        out = solve_banded((1, 1), ab, rhs)
    except (LinAlgError, ValueError) as e:
        raise SingularSystemError(f"tridiagonal solve failed: {e}") from e
    if not np.all(np.isfinite(out)):
        raise SingularSystemError("tridiagonal solve produced non-finite values")
    return out


def upwind_divergence(
    v_pos: FloatArray, v_neg: FloatArray, rho: FloatArray, dx: float
) -> tuple[FloatArray, float]:
    """
    Flux-split upwind approximation of d(v rho)/dx.

    ``v_pos`` carries mass to the right and ``v_neg`` to the left. Fluxes leaving the two end
    nodes leave the domain. Returns the divergence and the outflow rate through the ends.
    """
    qp = v_pos * rho
    qm = v_neg * rho
    div = qp - qm
    div[1:] -= qp[:-1]
    div[:-1] += qm[1:]
    return div / dx, float(qp[-1] - qm[0])


def forward_difference(u: FloatArray, dx: float) -> FloatArray:
    out = np.zeros_like(u)
    out[:-1] = (u[1:] - u[:-1]) / dx
    return out


def backward_difference(u: FloatArray, dx: float) -> FloatArray:
    out = np.zeros_like(u)
    out[1:] = (u[1:] - u[:-1]) / dx
    return out


@dataclass(frozen=True)
class TransportSplit:
    """
    Upwind masks for the two parts of the drift.

    ``drift0_right`` is 1 where b0 > 0, 0 where b0 < 0 and 1/2 where b0 = 0;
    ``control_right`` is 1 where the control part moves mass to the right.
    """

    drift0_right: FloatArray
    control_right: FloatArray

    @classmethod
    def build(cls, drift0: FloatArray, direction: FloatArray) -> "TransportSplit":
        right0 = np.where(drift0 > 0, 1.0, np.where(drift0 < 0, 0.0, 0.5))
        return cls(drift0_right=right0, control_right=np.where(direction > 0, 1.0, 0.0))

    def velocities(self, b0: FloatArray, b1: FloatArray) -> tuple[FloatArray, FloatArray]:
        """Split (b0, b1) into the rightward and leftward velocities."""
        v_pos = self.drift0_right * b0 + self.control_right * b1
        v_neg = (1.0 - self.drift0_right) * b0 + (1.0 - self.control_right) * b1
        return v_pos, v_neg

    def gradients(self, u: FloatArray, dx: float) -> tuple[FloatArray, FloatArray]:
        """Transport gradients (p0, p1) paired with b0 and with the control part of the drift."""
        fwd = forward_difference(u, dx)
        bwd = backward_difference(u, dx)
        p0 = self.drift0_right * fwd + (1.0 - self.drift0_right) * bwd
        p1 = self.control_right * fwd + (1.0 - self.control_right) * bwd
        return p0, p1
