"""Growth-rate laws and the upwind fast-marching front solver.

The attachment time satisfies ``speed * |grad(theta)| = 1`` outside the seed
with ``theta = 0`` on the seed.  We discretize with first-order Godunov
upwinding and march the front with a binary heap, which is the simplest
consistent monotone scheme and therefore converges to the viscosity
solution.  Speeds are sampled at nodes; each update uses the receiving
node's speed.
"""

from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .geometry import CellMask, Grid

__all__ = [
    "GrowthLaw",
    "SpeedField",
    "AttachmentField",
    "GradientReport",
    "evaluate_speed",
    "solve_eikonal",
    "check_gradient_bounds",
    "upwind_gradient",
]


@dataclass(frozen=True)
class GrowthLaw:
    """Pointwise growth-rate law, clipped into ``[gamma_min, gamma_max]``.

    Kinds:
      ``constant``      rate = gamma0
      ``affine-trace``  rate = gamma0 + coeff * trace(backstrain)
      ``radial``        rate = gamma0 * (1 + coeff * |x - center|)

    Clipping enforces the two-sided rate bounds for arbitrary parameter
    choices, so evaluated speeds always satisfy the model assumptions.
    """

    kind: str
    gamma0: float
    gamma_min: float
    gamma_max: float
    coeff: float = 0.0
    center: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "affine-trace", "radial"):
            raise ConfigError(f"unknown growth law kind: {self.kind!r}")
        if not (0.0 < self.gamma_min < self.gamma_max):
            raise ConfigError(
                "growth-rate bounds must satisfy 0 < gamma_min < gamma_max (A5)"
            )
        if self.kind == "radial" and self.center is None:
            raise ConfigError("radial growth law requires a center")

    @property
    def lipschitz_alpha(self) -> float:
        """Lipschitz constant of the rate w.r.t. the backstrain argument."""
        if self.kind == "affine-trace":
            return abs(self.coeff) * math.sqrt(3)  # trace of a d x d, d <= 3
        return 0.0

    @property
    def lipschitz_x(self) -> float:
        """Lipschitz constant of the rate w.r.t. position."""
        if self.kind == "radial":
            return abs(self.coeff) * abs(self.gamma0)
        return 0.0

    def evaluate(self, grid: Grid, alpha: np.ndarray | None) -> np.ndarray:
        """Raw nodal rates before clipping; ``alpha`` is a nodal Voigt field."""
        if self.kind == "constant":
            return np.full(grid.node_shape, float(self.gamma0))
        if self.kind == "affine-trace":
            if alpha is None:
                return np.full(grid.node_shape, float(self.gamma0))
            trace = np.sum(alpha[..., : grid.dim], axis=-1)
            return self.gamma0 + self.coeff * trace
        coords = grid.node_coords()
        r = np.linalg.norm(coords - np.asarray(self.center), axis=-1)
        return self.gamma0 * (1.0 + self.coeff * r)


@dataclass(frozen=True)
class SpeedField:
    """Nodal front speed together with its admissible bounds and provenance."""

    grid: Grid
    values: np.ndarray
    gamma_min: float
    gamma_max: float
    generation: int = 0

    def __post_init__(self):
        v = self.values
        if v.shape != self.grid.node_shape:
            raise ValueError("speed values must live on grid nodes")
        if not np.all((v >= self.gamma_min) & (v <= self.gamma_max)):
            raise ValueError("speed values violate the declared bounds")


def evaluate_speed(
    law: GrowthLaw, alpha: np.ndarray | None, grid: Grid, generation: int = 0
) -> SpeedField:
    """Evaluate a growth law on the grid nodes and clip into its bounds."""
    if alpha is not None and not np.all(np.isfinite(alpha)):
        raise ValueError("backstrain field contains non-finite entries")
    raw = law.evaluate(grid, alpha)
    clipped = np.clip(raw, law.gamma_min, law.gamma_max)
    return SpeedField(grid, clipped, law.gamma_min, law.gamma_max, generation)


@dataclass(frozen=True)
class AttachmentField:
    """Attachment times on grid nodes.

    ``values`` is 0 exactly on seed nodes and +inf on nodes unreachable from
    the seed.  ``boundary_flagged`` marks non-seed nodes whose upwind stencil
    touches the edge of the computational box (their values may be polluted
    by the finite box).  ``residual`` is the maximum deviation of the
    discrete upwind equation over solved nodes.
    """

    grid: Grid
    values: np.ndarray
    seed_nodes: np.ndarray
    speed: SpeedField
    residual: float
    boundary_flagged: np.ndarray

    def max_finite(self) -> float:
        finite = self.values[np.isfinite(self.values)]
        return float(finite.max()) if finite.size else 0.0


def _solve_update(mins, rhs):
    """Godunov upwind update from per-axis neighbor minima.

    Solves sum_a max(t - a_k, 0)^2 = rhs^2 using the sorted neighbor values,
    adding axes one at a time while the trial solution still exceeds the
    next value.
    """
    vals = sorted(v for v in mins if math.isfinite(v))
    if not vals:
        return math.inf
    t = vals[0] + rhs
    acc = vals[0]
    acc2 = vals[0] * vals[0]
    for k in range(2, len(vals) + 1):
        v = vals[k - 1]
        if t <= v:
            break
        acc += v
        acc2 += v * v
        disc = acc * acc - k * (acc2 - rhs * rhs)
        t = (acc + math.sqrt(disc)) / k
    return t


def solve_eikonal(speed: SpeedField, seed: CellMask) -> AttachmentField:
    """Fast-marching solution of the discrete front equation.

    ``theta`` is zero on the node hull of the seed mask; every other node
    reachable from the seed receives the first-order upwind value.  Nodes in
    components not connected to the seed are flagged with +inf and a warning.
    The acceptance order is asserted to be nondecreasing and the final field
    is verified to satisfy the upwind equation to a 1e-10 residual.
    """
    if seed.is_empty():
        raise ValueError("seed mask is empty")
    grid = speed.grid
    if seed.grid != grid:
        raise ValueError("seed and speed live on different grids")
    shape = grid.node_shape
    h = grid.spacing
    dim = grid.dim

    seed_nodes = seed.node_hull
    theta = np.full(shape, np.inf)
    theta[seed_nodes] = 0.0
    state = np.zeros(shape, dtype=np.uint8)  # 0 far, 1 tentative, 2 accepted
    state[seed_nodes] = 2

    flat_theta = theta.ravel()
    flat_state = state.ravel()
    flat_speed = np.ascontiguousarray(speed.values, dtype=float).ravel()
    strides = [int(np.prod(shape[a + 1 :])) for a in range(dim)]
    sizes = list(shape)

    heap: list[tuple[float, int]] = []

    def try_update(j, coords_j):
        rhs = h / flat_speed[j]
        mins = []
        for a in range(dim):
            best = math.inf
            if coords_j[a] > 0:
                q = j - strides[a]
                if flat_state[q] == 2:
                    best = flat_theta[q]
            if coords_j[a] < sizes[a] - 1:
                q = j + strides[a]
                if flat_state[q] == 2 and flat_theta[q] < best:
                    best = flat_theta[q]
            mins.append(best)
        t = _solve_update(mins, rhs)
        if t < flat_theta[j]:
            flat_theta[j] = t
            flat_state[j] = 1
            heapq.heappush(heap, (t, j))

    def coords_of(j):
        out = []
        for a in range(dim - 1, 0, -1):
            out.append(j % sizes[a])
            j //= sizes[a]
        out.append(j)
        out.reverse()
        return out

    # initialize the narrow band around the seed
    band = ndimage.binary_dilation(
        seed_nodes, structure=ndimage.generate_binary_structure(dim, 1)
    ) & ~seed_nodes
    for j in np.flatnonzero(band.ravel()):
        try_update(int(j), coords_of(int(j)))

    last_accepted = 0.0
    tol = 1e-12
    while heap:
        t, j = heapq.heappop(heap)
        if flat_state[j] == 2 or t > flat_theta[j]:
            continue  # stale entry
        assert t >= last_accepted - tol * (1.0 + abs(t)), (
            "fast marching acceptance order regressed"
        )
        last_accepted = t
        flat_state[j] = 2
        cj = coords_of(j)
        for a in range(dim):
            if cj[a] > 0:
                q = j - strides[a]
                if flat_state[q] != 2:
                    cq = list(cj)
                    cq[a] -= 1
                    try_update(q, cq)
            if cj[a] < sizes[a] - 1:
                q = j + strides[a]
                if flat_state[q] != 2:
                    cq = list(cj)
                    cq[a] += 1
                    try_update(q, cq)

    unreachable = flat_state != 2
    if unreachable.any():
        warnings.warn(
            f"{int(unreachable.sum())} nodes unreachable from the seed; "
            "flagged with +inf",
            stacklevel=2,
        )
        flat_theta[unreachable] = np.inf

    theta = flat_theta.reshape(shape)
    grad = upwind_gradient(theta, h)
    interior = np.isfinite(theta) & ~seed_nodes
    residual = 0.0
    if interior.any():
        residual = float(
            np.abs(grad[interior] * speed.values[interior] - 1.0).max()
        )
    if residual > 1e-10:
        raise AssertionError(
            f"upwind consistency residual {residual:.3e} exceeds 1e-10"
        )

    boundary = np.zeros(shape, dtype=bool)
    for a in range(dim):
        sl = [slice(None)] * dim
        sl[a] = 0
        boundary[tuple(sl)] = True
        sl[a] = shape[a] - 1
        boundary[tuple(sl)] = True
    boundary &= ~seed_nodes

    return AttachmentField(grid, theta, seed_nodes, speed, residual, boundary)


def upwind_gradient(theta: np.ndarray, h: float) -> np.ndarray:
    """Godunov upwind gradient magnitude of a nodal field.

    Per axis the contribution is ``max(theta - min(neighbors), 0) / h``;
    missing neighbors at the box edge are ignored.  Infinite nodes yield
    +inf.
    """
    dim = theta.ndim
    total = np.zeros_like(theta)
    for a in range(dim):
        nmin = np.full_like(theta, np.inf)
        lo = [slice(None)] * dim
        hi = [slice(None)] * dim
        lo[a] = slice(None, -1)
        hi[a] = slice(1, None)
        np.minimum(nmin[tuple(lo)], theta[tuple(hi)], out=nmin[tuple(lo)])
        np.minimum(nmin[tuple(hi)], theta[tuple(lo)], out=nmin[tuple(hi)])
        with np.errstate(invalid="ignore"):
            diff = np.where(np.isfinite(theta), theta - nmin, np.inf)
        diff = np.maximum(diff, 0.0)
        total += (diff / h) ** 2
    return np.sqrt(total)


@dataclass(frozen=True)
class GradientReport:
    """Extremes of the upwind gradient against the admissible slowness band."""

    grad_min: float
    grad_max: float
    lower_bound: float
    upper_bound: float
    lower_violation: float
    upper_violation: float
    n_checked: int
    n_boundary_flagged: int

    @property
    def max_violation(self) -> float:
        return max(self.lower_violation, self.upper_violation)

    def ok(self, tolerance: float = 0.0) -> bool:
        return self.max_violation <= tolerance


def check_gradient_bounds(theta: AttachmentField, delta: float = 0.0) -> GradientReport:
    """Check the two-sided slowness bounds of the upwind gradient.

    Off the seed the gradient magnitude of the attachment time must lie in
    ``[1/gamma_max - delta, 1/gamma_min + delta]``.  Returns the measured
    extremes and the worst violation of each bound over solved nodes.
    """
    grad = upwind_gradient(theta.values, theta.grid.spacing)
    sel = np.isfinite(theta.values) & ~theta.seed_nodes
    lower = 1.0 / theta.speed.gamma_max - delta
    upper = 1.0 / theta.speed.gamma_min + delta
    if not sel.any():
        return GradientReport(0.0, 0.0, lower, upper, 0.0, 0.0, 0, 0)
    g = grad[sel]
    gmin = float(g.min())
    gmax = float(g.max())
    return GradientReport(
        grad_min=gmin,
        grad_max=gmax,
        lower_bound=lower,
        upper_bound=upper,
        lower_violation=max(0.0, lower - gmin),
        upper_violation=max(0.0, gmax - upper),
        n_checked=int(sel.sum()),
        n_boundary_flagged=int(theta.boundary_flagged.sum()),
    )
