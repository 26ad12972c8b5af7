"""File emission and ingestion.

Formats (all plain text, documented in the README):

* VTK legacy ASCII ``STRUCTURED_POINTS``: nodal scalars/vectors/tensor
  components as POINT_DATA, cell masks as CELL_DATA (0/1).  Values are
  written x-fastest, matching the VTK convention.
* CSV: one node per row, ``x,y[,z],component...`` in x-fastest order.
* Run-length-encoded masks: ``count value`` pairs over the x-fastest cell
  ordering.
* ``summary.txt``: ``key = value`` lines, machine readable.

Floats are rendered with repr-faithful precision so identical runs yield
byte-identical artifacts.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geometry import CellMask, Grid

__all__ = [
    "write_vtk_scalar",
    "write_vtk_vector",
    "write_vtk_tensor",
    "write_vtk_cell_mask",
    "write_csv_scalar",
    "write_rle_mask",
    "read_theta_csv",
    "write_summary",
    "write_diagnostics_csv",
    "tensor_component_names",
]


def _fmt(x) -> str:
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _x_fastest(values: np.ndarray) -> np.ndarray:
    """Flatten a grid-indexed array with the first axis varying fastest."""
    return np.ascontiguousarray(values.T).reshape(values.size)


def _vtk_header(grid: Grid, title: str, dims: tuple[int, ...]) -> list[str]:
    pad = (1,) * (3 - grid.dim)
    dims3 = dims + pad
    origin3 = tuple(grid.origin) + (0.0,) * (3 - grid.dim)
    return [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        "DIMENSIONS " + " ".join(str(n) for n in dims3),
        "ORIGIN " + " ".join(_fmt(v) for v in origin3),
        "SPACING " + " ".join(_fmt(grid.spacing) for _ in range(3)),
    ]


def _write(path, lines):
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_vtk_scalar(path, grid: Grid, values: np.ndarray, name: str):
    """Nodal scalar field as a structured-points POINT_DATA block."""
    lines = _vtk_header(grid, f"accrete {name}", grid.node_shape)
    lines.append(f"POINT_DATA {grid.n_nodes}")
    lines.append(f"SCALARS {name} double 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(_fmt(v) for v in _x_fastest(values))
    _write(path, lines)


def write_vtk_vector(path, grid: Grid, values: np.ndarray, name: str):
    """Nodal vector field; 2D vectors are padded with a zero z-component."""
    lines = _vtk_header(grid, f"accrete {name}", grid.node_shape)
    lines.append(f"POINT_DATA {grid.n_nodes}")
    lines.append(f"VECTORS {name} double")
    comps = [_x_fastest(values[..., i]) for i in range(grid.dim)]
    zeros = np.zeros_like(comps[0])
    while len(comps) < 3:
        comps.append(zeros)
    for row in zip(*comps):
        lines.append(" ".join(_fmt(v) for v in row))
    _write(path, lines)


def tensor_component_names(dim: int) -> list[str]:
    if dim == 2:
        return ["xx", "yy", "xy"]
    return ["xx", "yy", "zz", "yz", "xz", "xy"]


def write_vtk_tensor(path, grid: Grid, voigt: np.ndarray, name: str):
    """Nodal symmetric tensor field, one SCALARS block per component."""
    lines = _vtk_header(grid, f"accrete {name}", grid.node_shape)
    lines.append(f"POINT_DATA {grid.n_nodes}")
    for c, suffix in enumerate(tensor_component_names(grid.dim)):
        lines.append(f"SCALARS {name}_{suffix} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(_fmt(v) for v in _x_fastest(voigt[..., c]))
    _write(path, lines)


def write_vtk_cell_mask(path, grid: Grid, mask: CellMask, name: str):
    """Cell mask as 0/1 CELL_DATA on the structured grid."""
    lines = _vtk_header(grid, f"accrete {name}", grid.node_shape)
    lines.append(f"CELL_DATA {grid.n_cells}")
    lines.append(f"SCALARS {name} int 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(
        str(int(v)) for v in _x_fastest(mask.values.astype(np.int8))
    )
    _write(path, lines)


def write_csv_scalar(path, grid: Grid, values: np.ndarray, name: str):
    """Nodal scalar as CSV rows ``x,y[,z],value`` in x-fastest order."""
    coords = grid.node_coords()
    cols = [_x_fastest(coords[..., i]) for i in range(grid.dim)]
    cols.append(_x_fastest(values))
    header = ",".join(list("xyz"[: grid.dim]) + [name])
    lines = ["# " + header]
    for row in zip(*cols):
        lines.append(",".join(_fmt(v) for v in row))
    _write(path, lines)


def read_theta_csv(path, grid: Grid) -> np.ndarray:
    """Read an attachment-time field written by ``write_csv_scalar``.

    Expects one value per node in x-fastest order (last column); raises
    ``ConfigError`` on shape mismatch or negative/non-finite entries.
    """
    try:
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read attachment-time file {path}: {exc}")
    if data.shape[0] != grid.n_nodes:
        raise ConfigError(
            f"attachment-time file {path} has {data.shape[0]} rows, "
            f"expected {grid.n_nodes} nodes"
        )
    flat = data[:, -1]
    if not np.all(np.isfinite(flat)) or flat.min() < 0:
        raise ConfigError("attachment times must be finite and nonnegative")
    return np.ascontiguousarray(flat.reshape(grid.node_shape[::-1]).T)


def write_rle_mask(path, mask: CellMask):
    """Run-length encoding of a mask over the x-fastest cell order."""
    grid = mask.grid
    flat = _x_fastest(mask.values.astype(np.int8))
    lines = [
        "# accrete rle mask",
        "# cells: " + " ".join(str(n) for n in grid.cells) + " (x-fastest)",
    ]
    if flat.size:
        boundaries = np.flatnonzero(np.diff(flat)) + 1
        starts = np.concatenate(([0], boundaries))
        ends = np.concatenate((boundaries, [flat.size]))
        for s, e in zip(starts, ends):
            lines.append(f"{e - s} {int(flat[s])}")
    _write(path, lines)


def write_summary(path, entries: dict):
    """Key-value run summary, one ``key = value`` pair per line."""
    lines = []
    for key, value in entries.items():
        if isinstance(value, float):
            value = _fmt(value)
        lines.append(f"{key} = {value}")
    _write(path, lines)


def write_diagnostics_csv(path, diag):
    """Flat CSV of iteration traces, constants and bound checks."""
    lines = ["kind,outer,subinterval,index,value"]

    def row(kind, outer="", sub="", index="", value=""):
        if isinstance(value, float):
            value = _fmt(value)
        lines.append(f"{kind},{outer},{sub},{index},{value}")

    row("smallness_factor", value=diag.smallness)
    row("strain_sup_bound", value=diag.strain_bound)
    row("lipschitz_budget", value=diag.lipschitz_budget)
    for j, q in enumerate(diag.subinterval_factors, start=1):
        row("contraction_factor", sub=j, value=q)
    if diag.korn_initial is not None:
        row("korn_initial", value=diag.korn_initial.korn_constant)
        row("poincare_initial", value=diag.korn_initial.poincare_constant)
        row("combined_initial", value=diag.korn_initial.combined)
    for m, korn, poin, comb in diag.korn_family:
        row("korn_stamp", index=m, value=korn)
        row("poincare_stamp", index=m, value=poin)
        row("combined_stamp", index=m, value=comb)
    for t in diag.inner_trace:
        row(
            "inner_difference",
            outer=t["outer"],
            sub=t["subinterval"],
            index=t["sweep"],
            value=t["difference"],
        )
        if math.isfinite(t["ratio"]):
            row(
                "inner_ratio",
                outer=t["outer"],
                sub=t["subinterval"],
                index=t["sweep"],
                value=t["ratio"],
            )
    for k, r in enumerate(diag.outer_residuals, start=1):
        row("outer_residual", outer=k, value=r)
    row("energy_identity_max_rel", value=diag.energy_identity_max_rel)
    row("wellposedness_min_margin", value=diag.wellposedness_min_margin)
    row("young_margin", value=diag.young_margin)
    row("time_lipschitz_margin", value=diag.time_lipschitz_margin)
    row("strain_sup", value=diag.strain_sup)
    row("alpha_sup", value=diag.alpha_sup)
    row("alpha_w1inf", value=diag.alpha_w1inf)
    row("korn_family_spread", value=diag.korn_family_spread)
    row("outer_iterations", value=str(diag.n_outer))
    row("converged", value=str(diag.converged).lower())
    row("wall_time_seconds", value=diag.wall_time)
    _write(path, lines)
