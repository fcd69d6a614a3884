"""Optimal control of nonlinear Fokker-Planck equations: PDE solvers, adjoints and particles."""

from fp_control.adjoint import AdjointPath, solve_adjoint, solve_hjb, step_backward
from fp_control.forward import DensityPath, evaluate_cost, solve_forward, step_forward
from fp_control.grid import Grid, NoisePath, flat_distance, make_grid, sample_brownian
from fp_control.model import BailoutParams, ModelSpec, bailout_model, shift_model
from fp_control.picard import FbSolution, PicardOptions, picard_solve

__all__ = [
    "AdjointPath",
    "BailoutParams",
    "DensityPath",
    "FbSolution",
    "Grid",
    "ModelSpec",
    "NoisePath",
    "PicardOptions",
    "bailout_model",
    "evaluate_cost",
    "flat_distance",
    "make_grid",
    "picard_solve",
    "sample_brownian",
    "shift_model",
    "solve_adjoint",
    "solve_forward",
    "solve_hjb",
    "step_backward",
    "step_forward",
]
