"""
Artifact writers: CSV tables of the solution fields, JSON reports and the Parquet state dump.

CSV files always carry a header row and use one fixed float format, so two runs with identical
inputs produce byte-identical files.
"""

import json
import logging
from collections.abc import Iterable
from pathlib import Path

import numpy as np
import pandas as pd
import pyarrow as pa
import pyarrow.parquet as pq
from pydantic import BaseModel

from fp_control.adjoint import AdjointPath
from fp_control.forward import DensityPath
from fp_control.grid import FloatArray, Grid
from fp_control.particles import ParticleTrajectory, states_frame, summary_frame
from fp_control.reports import ActiveInterval

logger = logging.getLogger(__name__)

PARTICLE_STATE_SCHEMA = pa.schema(
    [
        ("t", pa.float64()),
        ("particle", pa.int64()),
        ("x", pa.float64()),
        ("cum_intensity", pa.float64()),
        ("weight", pa.float64()),
    ]
)


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.12g", lineterminator="\n")
    logger.info("Wrote %d rows to %s", len(frame), path)
    return path


def _long_frame(times: FloatArray, g: Grid, columns: dict[str, FloatArray]) -> pd.DataFrame:
    rows = len(times)
    data = {
        "t": np.repeat(times, g.n_x),
        "x": np.tile(g.nodes, rows),
    }
    for name, values in columns.items():
        data[name] = np.asarray(values).reshape(-1)
    return pd.DataFrame(data)


def density_frame(path: DensityPath) -> pd.DataFrame:
    return _long_frame(path.grid.times, path.grid, {"rho": path.slices})


def adjoint_frame(path: AdjointPath) -> pd.DataFrame:
    return _long_frame(
        path.grid.times, path.grid, {"u": path.slices, "du_dx": path.grad_slices}
    )


def control_frame(gamma: FloatArray, g: Grid) -> pd.DataFrame:
    return _long_frame(g.times[:-1], g, {"gamma": gamma})


def residuals_frame(residuals: FloatArray, costs: FloatArray) -> pd.DataFrame:
    return pd.DataFrame(
        {"iter": np.arange(1, len(residuals) + 1), "residual": residuals, "cost": costs}
    )


def active_set_frame(intervals: Iterable[ActiveInterval]) -> pd.DataFrame:
    """Columns t, a_t, b_t, contiguous; empty active sets leave a_t and b_t blank."""
    return pd.DataFrame(
        [iv.model_dump() for iv in intervals], columns=["t", "a_t", "b_t", "contiguous"]
    )


def write_density(path: DensityPath, out: Path) -> Path:
    return _write_csv(density_frame(path), out)


def write_adjoint(path: AdjointPath, out: Path) -> Path:
    return _write_csv(adjoint_frame(path), out)


def write_control(gamma: FloatArray, g: Grid, out: Path) -> Path:
    return _write_csv(control_frame(gamma, g), out)


def write_residuals(residuals: FloatArray, costs: FloatArray, out: Path) -> Path:
    return _write_csv(residuals_frame(residuals, costs), out)


def write_active_set(intervals: Iterable[ActiveInterval], out: Path) -> Path:
    return _write_csv(active_set_frame(intervals), out)


def write_particles_summary(traj: ParticleTrajectory, out: Path) -> Path:
    return _write_csv(summary_frame(traj), out)


def write_particle_states(traj: ParticleTrajectory, out: Path) -> Path:
    """Dump every recorded particle state to Parquet."""
    frame = states_frame(traj)
    table = pa.Table.from_pandas(frame, schema=PARTICLE_STATE_SCHEMA, preserve_index=False)
    out.parent.mkdir(parents=True, exist_ok=True)
    pq.write_table(table, out, compression="snappy")
    logger.info("Wrote %d particle states to %s", table.num_rows, out)
    return out


def write_report(report: BaseModel | list[BaseModel] | dict, out: Path) -> Path:
    """Write a pydantic report (or a dict / list of them) as indented JSON."""
    if isinstance(report, BaseModel):
        payload = report.model_dump(mode="json")
    elif isinstance(report, list):
        payload = [r.model_dump(mode="json") for r in report]
    else:
        payload = {
            k: v.model_dump(mode="json") if isinstance(v, BaseModel) else v
            for k, v in report.items()
        }
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("Wrote report to %s", out)
    return out
