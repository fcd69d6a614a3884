from typing import Literal

from pydantic import BaseModel, Field


class GradientCheckReport(BaseModel):
    """
    Adjoint directional derivative against the finite-difference oracle.
    """

    adjoint_value: float = Field(..., description="Directional derivative from the adjoint")
    fd_value: float = Field(..., description="Finite-difference derivative at step eps")
    eps: float = Field(..., gt=0, description="Finite-difference step")
    rel_err: float = Field(
        ..., ge=0, description="|adjoint_value - fd_value| / max(|fd_value|, 1e-12)"
    )
    fd_value_half_eps: float | None = Field(
        None, description="Finite-difference derivative at eps / 2 (Richardson check)"
    )
    scheme: Literal["central", "forward", "backward"] = Field(
        "central", description="Finite-difference stencil that was admissible"
    )
    passed: bool = Field(..., description="Agreement within 1% relative plus 1e-6 absolute")

    class Config:
        json_schema_extra = {
            "example": {
                "adjoint_value": -0.01234,
                "fd_value": -0.01236,
                "eps": 0.001,
                "rel_err": 0.0016,
                "fd_value_half_eps": -0.01235,
                "scheme": "central",
                "passed": True,
            }
        }


class GradientCheckSummary(BaseModel):
    """All gradient-check pairs of one run."""

    checks: list[GradientCheckReport] = Field(default_factory=list)
    max_rel_err: float = Field(0.0, ge=0)
    passed: bool = Field(True)


class TrialCost(BaseModel):
    """Cost of one random admissible control."""

    kind: Literal["bang-bang", "constant"] = Field(..., description="How the control was drawn")
    cost: float = Field(..., description="Cost functional of the trial control")


class CostComparisonReport(BaseModel):
    """
    Cost of a candidate optimal control against random admissible controls.
    """

    solution_cost: float = Field(..., description="Cost of the Picard control")
    trials: list[TrialCost] = Field(default_factory=list)
    margin: float | None = Field(
        None, description="min over trials of (trial cost - solution cost); None without trials"
    )
    caveat: str | None = Field(
        None, description="Set when the sufficiency theorem does not cover the model"
    )


class ActiveInterval(BaseModel):
    """Active set {control = g_max} at one time step."""

    t: float
    a_t: float | None = Field(None, description="Left end of the active set, None if empty")
    b_t: float | None = Field(None, description="Right end of the active set, None if empty")
    contiguous: bool = Field(True, description="Whether the active nodes form one interval")


class DistanceReport(BaseModel):
    """Flat distances between the PDE density and the particle density over time."""

    n_particles: int = Field(..., ge=1)
    times: list[float] = Field(default_factory=list)
    flat_distances: list[float] = Field(default_factory=list)
    max_distance: float = Field(0.0, ge=0)


class CompareReport(BaseModel):
    """
    Particle simulation against the PDE solver at the final time.
    """

    n_particles: int = Field(..., ge=1)
    flat_distance: float = Field(..., ge=0, description="Random equation with sigma0 = 0")
    shifted_flat_distance: float | None = Field(
        None, description="Pushed-forward comparison along one noise path (sigma0 > 0 only)"
    )
    particle_mass: float = Field(..., description="Mean survival weight at T")
    pde_mass: float = Field(..., description="PDE mass at T")
    pde_cost: float = Field(..., description="Cost functional from the PDE solve")
    particle_cost: float = Field(..., description="Monte Carlo cost estimate")
    particle_cost_se: float = Field(..., ge=0, description="Standard error of the estimate")
