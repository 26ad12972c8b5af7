"""Cartesian grids, shape rasterization and boolean cell masks.

The computational box is a uniform Cartesian grid in 2 or 3 dimensions.
Scalar unknowns of the front solver live on grid *nodes*; domains are
represented as boolean *cell* masks (one flag per cell, true when the cell
belongs to the body).  All geometry values are immutable after construction
and every operation here is pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DegenerateShapeError

__all__ = [
    "Grid",
    "Shape",
    "Ball",
    "Box",
    "Annulus",
    "Union",
    "Difference",
    "CellMask",
    "DomainClassParams",
    "rasterize",
    "sublevel_mask",
    "hausdorff_distance",
    "dilate_mask",
    "mask_distance",
    "docking_component",
]


@dataclass(frozen=True)
class Grid:
    """Uniform Cartesian grid covering the bounding box of the simulation.

    ``cells`` counts cells per axis; nodes number ``cells + 1`` per axis.
    The box spans ``origin + [0, n_i * spacing]`` on each axis.
    """

    cells: tuple[int, ...]
    spacing: float
    origin: tuple[float, ...]

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigError(f"grid dimension must be 2 or 3, got {self.dim}")
        if len(self.origin) != self.dim:
            raise ConfigError("origin and cells must have the same length")
        if self.spacing <= 0:
            raise ConfigError("grid spacing must be positive")
        if any(n < 4 for n in self.cells):
            raise ConfigError("need at least 4 cells per axis")

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def node_shape(self) -> tuple[int, ...]:
        return tuple(n + 1 for n in self.cells)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.node_shape))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    @property
    def box_measure(self) -> float:
        """Lebesgue measure of the full computational box."""
        return float(np.prod([n * self.spacing for n in self.cells]))

    @property
    def box_lo(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=float)

    @property
    def box_hi(self) -> np.ndarray:
        return self.box_lo + self.spacing * np.asarray(self.cells, dtype=float)

    @cached_property
    def node_axes(self) -> tuple[np.ndarray, ...]:
        return tuple(
            self.origin[i] + self.spacing * np.arange(self.cells[i] + 1)
            for i in range(self.dim)
        )

    @cached_property
    def cell_center_axes(self) -> tuple[np.ndarray, ...]:
        return tuple(
            self.origin[i] + self.spacing * (np.arange(self.cells[i]) + 0.5)
            for i in range(self.dim)
        )

    def node_coords(self) -> np.ndarray:
        """Node coordinates, shape ``node_shape + (dim,)``."""
        mesh = np.meshgrid(*self.node_axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def cell_centers(self) -> np.ndarray:
        """Cell center coordinates, shape ``cells + (dim,)``."""
        mesh = np.meshgrid(*self.cell_center_axes, indexing="ij")
        return np.stack(mesh, axis=-1)


class Shape:
    """Base class for rasterizable shape specifications."""

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean predicate at ``points`` of shape ``(..., dim)``."""
        raise NotImplementedError


@dataclass(frozen=True)
class Ball(Shape):
    center: tuple[float, ...]
    radius: float

    def contains(self, points):
        d2 = np.sum((points - np.asarray(self.center)) ** 2, axis=-1)
        return d2 < self.radius**2


@dataclass(frozen=True)
class Box(Shape):
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def contains(self, points):
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.all((points >= lo) & (points <= hi), axis=-1)


@dataclass(frozen=True)
class Annulus(Shape):
    center: tuple[float, ...]
    inner: float
    outer: float

    def contains(self, points):
        d2 = np.sum((points - np.asarray(self.center)) ** 2, axis=-1)
        return (d2 > self.inner**2) & (d2 < self.outer**2)


@dataclass(frozen=True)
class Union(Shape):
    parts: tuple[Shape, ...]

    def contains(self, points):
        out = self.parts[0].contains(points)
        for p in self.parts[1:]:
            out = out | p.contains(points)
        return out


@dataclass(frozen=True)
class Difference(Shape):
    base: Shape
    cut: Shape

    def contains(self, points):
        return self.base.contains(points) & ~self.cut.contains(points)


class CellMask:
    """Boolean characteristic set of grid cells, with cached derived data."""

    def __init__(self, grid: Grid, values: np.ndarray):
        values = np.asarray(values, dtype=bool)
        if values.shape != grid.cells:
            raise ValueError(
                f"mask shape {values.shape} does not match grid cells {grid.cells}"
            )
        self.grid = grid
        self._values = values
        self._values.setflags(write=False)

    @property
    def values(self) -> np.ndarray:
        return self._values

    @cached_property
    def count(self) -> int:
        return int(self._values.sum())

    @cached_property
    def measure(self) -> float:
        """Cell count times the cell volume."""
        return self.count * self.grid.spacing**self.grid.dim

    def is_empty(self) -> bool:
        return self.count == 0

    @cached_property
    def boundary(self) -> np.ndarray:
        """Cells of the mask with at least one false face-neighbor.

        Cells on the edge of the grid count as boundary cells (the face
        neighbor outside the box is treated as false).
        """
        eroded = ndimage.binary_erosion(
            self._values,
            structure=ndimage.generate_binary_structure(self.grid.dim, 1),
            border_value=0,
        )
        return self._values & ~eroded

    @cached_property
    def boundary_cells(self) -> np.ndarray:
        """Index list of boundary cells, shape ``(n, dim)``."""
        return np.argwhere(self.boundary)

    @cached_property
    def node_hull(self) -> np.ndarray:
        """Nodes that are corners of at least one mask cell (boolean array)."""
        out = np.zeros(self.grid.node_shape, dtype=bool)
        if self.count == 0:
            return out
        idx = np.argwhere(self._values)
        for offset in np.ndindex(*(2,) * self.grid.dim):
            pos = idx + np.asarray(offset)
            out[tuple(pos.T)] = True
        return out

    def cell_center_points(self) -> np.ndarray:
        """Coordinates of the mask's cell centers, shape ``(count, dim)``."""
        centers = self.grid.cell_centers()
        return centers[self._values]

    def is_subset_of(self, other: "CellMask") -> bool:
        return bool(np.all(~self._values | other._values))

    def __and__(self, other):
        return CellMask(self.grid, self._values & other._values)

    def __or__(self, other):
        return CellMask(self.grid, self._values | other._values)

    def __eq__(self, other):
        if not isinstance(other, CellMask):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self._values, other._values)

    def __hash__(self):
        return hash((self.grid, self._values.tobytes()))


@dataclass(frozen=True)
class DomainClassParams:
    """Parameters of the admissible domain family carried as metadata.

    ``john_center`` must lie inside the docking set; ``john_constant`` is in
    (0, 1]; ``margin`` is the required distance between the docking set and
    the boundary of the initial body.
    """

    john_center: tuple[float, ...]
    john_constant: float = 1.0
    margin: float = field(default=0.0)

    def __post_init__(self):
        if not (0.0 < self.john_constant <= 1.0):
            raise ConfigError("John constant must lie in (0, 1]")
        if self.margin < 0:
            raise ConfigError("margin must be nonnegative")

    def validate_against(self, docking: CellMask):
        """Check that the John center lies inside the rasterized docking set."""
        grid = docking.grid
        x = np.asarray(self.john_center) - grid.box_lo
        idx = np.floor(x / grid.spacing).astype(int)
        if np.any(idx < 0) or np.any(idx >= np.asarray(grid.cells)):
            raise ConfigError("John center lies outside the computational box")
        if not docking.values[tuple(idx)]:
            raise ConfigError("John center must lie inside the docking set")


def rasterize(shape: Shape, grid: Grid) -> CellMask:
    """Rasterize a shape by its predicate at cell centers.

    A cell belongs to the mask iff its center satisfies the shape predicate.
    Raises ``DegenerateShapeError`` when no cell center does.
    """
    values = shape.contains(grid.cell_centers())
    if not values.any():
        raise DegenerateShapeError(
            "degenerate shape: no cell center satisfies the predicate"
        )
    return CellMask(grid, values)


def sublevel_mask(theta, t: float, seed: CellMask) -> CellMask:
    """Cells attached strictly before time ``t``.

    ``theta`` is an attachment-time field on nodes (an ``AttachmentField`` or
    a bare nodal array).  A cell's attachment value is the mean of its corner
    nodes; the cell is included iff that value is < t.  At ``t = 0`` the
    stored seed mask is returned (the zero level set has no grid interior).
    Ties ``value == t`` count as not yet attached.
    """
    if t < 0:
        raise ValueError("sublevel time must be nonnegative")
    if t == 0:
        return seed
    values = np.asarray(getattr(theta, "values", theta), dtype=float)
    grid = seed.grid
    if values.shape != grid.node_shape:
        raise ValueError("theta shape does not match the grid nodes")
    cell_theta = _corner_mean(values, grid.dim)
    return CellMask(grid, cell_theta < t)


def _corner_mean(nodal: np.ndarray, dim: int) -> np.ndarray:
    """Average the 2^dim corner values of each cell."""
    out = nodal
    for axis in range(dim):
        lo = tuple(slice(None, -1) if a == axis else slice(None) for a in range(dim))
        hi = tuple(slice(1, None) if a == axis else slice(None) for a in range(dim))
        out = 0.5 * (out[lo] + out[hi])
    return out


def hausdorff_distance(a: CellMask, b: CellMask) -> float:
    """Symmetric Hausdorff distance between the cell-center sets of two masks."""
    if a.is_empty() or b.is_empty():
        raise ValueError("hausdorff_distance requires nonempty masks")
    return max(_directed_distance(a, b), _directed_distance(b, a))


def _directed_distance(a: CellMask, b: CellMask) -> float:
    # Exact Euclidean distance from every cell center to the nearest center
    # of ``b``, evaluated by a distance transform of the complement.
    h = a.grid.spacing
    dist_to_b = ndimage.distance_transform_edt(
        ~b.values, sampling=(h,) * a.grid.dim
    )
    return float(dist_to_b[a.values].max())


def mask_distance(inner: CellMask, outer: CellMask) -> float:
    """Distance from ``inner`` cells to the complement of ``outer``.

    Measured between cell centers; used to check containment margins such as
    the docking-set clearance inside the initial body.
    """
    if inner.is_empty():
        raise ValueError("inner mask is empty")
    h = inner.grid.spacing
    comp = ~outer.values
    if not comp.any():
        # outer covers the whole box; margin limited by the box itself
        return float("inf")
    dist = ndimage.distance_transform_edt(outer.values, sampling=(h,) * inner.grid.dim)
    return float(dist[inner.values].min())


def dilate_mask(mask: CellMask, radius: float) -> CellMask:
    """Euclidean dilation of a mask by ``radius`` (cell-center metric)."""
    if radius < 0:
        raise ValueError("dilation radius must be nonnegative")
    h = mask.grid.spacing
    dist = ndimage.distance_transform_edt(~mask.values, sampling=(h,) * mask.grid.dim)
    return CellMask(mask.grid, dist <= radius)


def docking_component(mask: CellMask, docking: CellMask) -> CellMask:
    """Restrict a mask to its connected components that contain docking cells.

    Face connectivity.  Returns ``mask`` unchanged (same object) when every
    component already touches the docking set.
    """
    labels, n = ndimage.label(
        mask.values, structure=ndimage.generate_binary_structure(mask.grid.dim, 1)
    )
    keep = np.unique(labels[docking.values & mask.values])
    keep = keep[keep > 0]
    if len(keep) == 0:
        raise ConfigError("docking set does not intersect the body mask")
    filtered = np.isin(labels, keep) & mask.values
    if filtered.sum() == mask.count:
        return mask
    return CellMask(mask.grid, filtered)
