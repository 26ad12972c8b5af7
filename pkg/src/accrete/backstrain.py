"""Space-time strain smoothing and the backstrain evaluation.

The smoothing operator integrates the trivially extended strain history
against a time kernel and a compactly supported radial space kernel:
midpoint quadrature over the stored stamps in time, direct h^d-weighted
summation over the kernel stencil in space.

Bookkeeping convention: the time-kernel norms entering the budget constants
are exact closed-form integrals (all built-in kernels are nonnegative,
nonincreasing and convex, so the midpoint time sums never exceed them);
the space-kernel norms are the exact finite sums of the sampled stencil,
which is what the discrete Young-type bounds hold against at machine
precision.  Closed-form continuum values of the space norms are recorded
alongside for reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, HistoryError
from .geometry import Grid
from .elasticity import n_voigt, voigt_duplication

__all__ = [
    "KernelSpec",
    "BoundKernel",
    "StrainHistory",
    "KField",
    "BackstrainField",
    "KernelBudget",
    "convolve_K",
    "evaluate_backstrain",
    "kernel_budget",
    "smallness_factor",
]

_TIME_KINDS = ("constant", "exponential", "hat")


@dataclass(frozen=True)
class KernelSpec:
    """Closed-form kernel library entry.

    Time kernels on [0, T]:
      ``constant``      k(s) = amplitude
      ``exponential``   k(s) = amplitude * exp(-s / tau)
      ``hat``           k(s) = amplitude * max(0, 1 - s / tau)

    Space kernel: the radial bump ``(1 - (|x|/r)^2)^2`` supported on the
    ball of radius ``space_radius``, optionally normalized so the sampled
    stencil has unit discrete mass.
    """

    time_kind: str
    amplitude: float
    space_radius: float
    tau: float | None = None
    normalize: bool = True

    def __post_init__(self):
        if self.time_kind not in _TIME_KINDS:
            raise ConfigError(f"unknown time kernel {self.time_kind!r}")
        if self.amplitude < 0:
            raise ConfigError("time-kernel amplitude must be nonnegative")
        if self.time_kind in ("exponential", "hat"):
            if self.tau is None or self.tau <= 0:
                raise ConfigError(f"{self.time_kind} kernel requires tau > 0")
        if self.space_radius <= 0:
            raise ConfigError("space kernel radius must be positive")

    # -- time kernel ------------------------------------------------------

    def time_value(self, s):
        s = np.asarray(s, dtype=float)
        if self.time_kind == "constant":
            return np.full_like(s, self.amplitude)
        if self.time_kind == "exponential":
            return self.amplitude * np.exp(-s / self.tau)
        return self.amplitude * np.maximum(0.0, 1.0 - s / self.tau)

    def time_l1(self, a: float, b: float) -> float:
        """Exact integral of |k| over [a, b] for 0 <= a <= b."""
        if not (0 <= a <= b):
            raise ValueError("need 0 <= a <= b")
        k0 = self.amplitude
        if self.time_kind == "constant":
            return k0 * (b - a)
        if self.time_kind == "exponential":
            return k0 * self.tau * (math.exp(-a / self.tau) - math.exp(-b / self.tau))
        ta = min(a, self.tau)
        tb = min(b, self.tau)
        prim = lambda x: k0 * (x - x * x / (2 * self.tau))
        return prim(tb) - prim(ta)

    def time_derivative_l1(self, horizon: float) -> float:
        """Exact integral of |k'| over [0, horizon]."""
        k0 = self.amplitude
        if self.time_kind == "constant":
            return 0.0
        if self.time_kind == "exponential":
            return k0 * (1.0 - math.exp(-horizon / self.tau))
        return k0 * min(horizon, self.tau) / self.tau

    @property
    def time_at_zero(self) -> float:
        return float(self.amplitude)

    # -- space kernel -------------------------------------------------------

    def bind(self, grid: Grid) -> "BoundKernel":
        return BoundKernel(self, grid)


def _bump(rho_over_r: np.ndarray) -> np.ndarray:
    u2 = np.clip(rho_over_r, 0.0, None) ** 2
    return np.where(u2 < 1.0, (1.0 - u2) ** 2, 0.0)


class BoundKernel:
    """A kernel spec sampled on a specific grid."""

    def __init__(self, spec: KernelSpec, grid: Grid):
        h = grid.spacing
        if spec.space_radius <= 2 * h:
            raise ConfigError(
                f"space kernel radius {spec.space_radius} is not resolvable: "
                f"need more than two cells ({2 * h})"
            )
        m = int(math.ceil(spec.space_radius / h)) - 1
        if 2 * m + 1 > min(grid.node_shape):
            raise ConfigError(
                "support of the space kernel exceeds the computational box"
            )
        self.spec = spec
        self.grid = grid
        self.stencil_halfwidth = m

        axes = [np.arange(-m, m + 1) * h for _ in range(grid.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        rho = np.sqrt(sum(c**2 for c in mesh))
        raw = _bump(rho / spec.space_radius)
        hd = h**grid.dim
        if spec.normalize:
            total = float(raw.sum()) * hd
            if total <= 0:
                raise ConfigError("space kernel stencil has zero mass")
            raw = raw / total
        self.weights = raw
        self.discrete_mass = float(raw.sum()) * hd
        self.phi_l2 = math.sqrt(float(np.sum(raw**2)) * hd)

        pad = np.pad(raw, 1)
        grads = np.gradient(pad, h)
        if grid.dim == 2:
            grads = list(grads)
        self.grad_phi_l2 = math.sqrt(
            sum(float(np.sum(g**2)) for g in grads) * hd
        )
        self.phi_h1 = math.sqrt(self.phi_l2**2 + self.grad_phi_l2**2)

        amp = raw.max() / _bump(np.array([0.0]))[0] if raw.max() > 0 else 1.0
        self.continuum_phi_l2 = _continuum_phi_l2(amp, spec.space_radius, grid.dim)

    def convolve(self, tensor_field: np.ndarray) -> np.ndarray:
        """Direct-sum spatial convolution of a nodal Voigt field."""
        hd = self.grid.spacing**self.grid.dim
        out = np.empty_like(tensor_field)
        for c in range(tensor_field.shape[-1]):
            out[..., c] = ndimage.convolve(
                tensor_field[..., c], self.weights * hd, mode="constant", cval=0.0
            )
        return out


def _continuum_phi_l2(amp: float, r: float, dim: int) -> float:
    if dim == 2:
        return amp * math.sqrt(math.pi * r**2 / 5.0)
    return amp * math.sqrt(512.0 * math.pi * r**3 / 3465.0)


class StrainHistory:
    """Append-only record of trivially extended strain fields on the box."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.stamps: list[float] = []
        self.fields: list[np.ndarray] = []
        self._sup_nodal = 0.0

    def __len__(self):
        return len(self.stamps)

    def append(self, stamp: float, strain: np.ndarray):
        if self.stamps and stamp <= self.stamps[-1]:
            raise ValueError("history stamps must be strictly increasing")
        nv = n_voigt(self.grid.dim)
        if strain.shape != self.grid.node_shape + (nv,):
            raise ValueError("strain field shape does not match the grid")
        self.stamps.append(float(stamp))
        self.fields.append(strain)
        w = voigt_duplication(self.grid.dim)
        nrm = math.sqrt(
            self.grid.spacing**self.grid.dim * float(np.sum(strain**2 * w))
        )
        self._sup_nodal = max(self._sup_nodal, nrm)

    def replace(self, index: int, strain: np.ndarray):
        """Overwrite one stamp's field (used by the fixed-point sweeps)."""
        self.fields[index] = strain
        w = voigt_duplication(self.grid.dim)
        norms = [
            math.sqrt(self.grid.spacing**self.grid.dim * float(np.sum(f**2 * w)))
            for f in self.fields
        ]
        self._sup_nodal = max(norms) if norms else 0.0

    @property
    def sup_nodal_norm(self) -> float:
        """Running supremum of the nodal L2 norms over the stored stamps."""
        return self._sup_nodal


@dataclass(frozen=True)
class KField:
    """Smoothed strain history evaluated at the stored stamps."""

    grid: Grid
    stamps: np.ndarray
    values: np.ndarray  # (n_stamps, *node_shape, nv)

    def sup_frobenius(self, index: int) -> float:
        w = voigt_duplication(self.grid.dim)
        v = self.values[index]
        return float(np.sqrt((v**2 * w).sum(axis=-1)).max())


@dataclass(frozen=True)
class BackstrainField:
    """Backstrain on the box nodes, tagged with its outer-iteration index."""

    values: np.ndarray
    generation: int = 0


def convolve_K(history: StrainHistory, kernel: BoundKernel) -> KField:
    """Space-time smoothing of a strain history at its own stamps.

    Midpoint quadrature in time over the stamp intervals (the interval
    average of the two endpoint fields times the kernel at the interval
    midpoint), direct summation in space.  The value at a stamp depends
    only on earlier stamps, so the result is causal by construction.
    """
    if len(history) == 0:
        raise ValueError("empty strain history")
    if kernel.grid != history.grid:
        raise ConfigError("kernel and history grids differ")
    stamps = np.asarray(history.stamps)
    n = len(stamps)
    shape = history.fields[0].shape
    out = np.zeros((n,) + shape)
    if n == 1:
        return KField(history.grid, stamps, out)

    spec = kernel.spec
    conv = []
    for j in range(1, n):
        avg = 0.5 * (history.fields[j - 1] + history.fields[j])
        conv.append(kernel.convolve(avg))
    mids = 0.5 * (stamps[:-1] + stamps[1:])
    widths = np.diff(stamps)
    for m in range(1, n):
        t_m = stamps[m]
        coeff = widths[:m] * spec.time_value(t_m - mids[:m])
        acc = np.zeros(shape)
        for j in range(m):
            acc += coeff[j] * conv[j]
        out[m] = acc
    return KField(history.grid, stamps, out)


def evaluate_backstrain(
    kfield: KField,
    theta_values: np.ndarray,
    tensor=None,
    prestress: np.ndarray | None = None,
    generation: int = 0,
) -> BackstrainField:
    """Trace of the smoothed history at the attachment time of each node.

    Linear interpolation between stamps; a node attached at time zero has an
    empty time integral, so only the prestress contribution remains.  Raises
    ``HistoryError`` when any attachment time exceeds the last stamp.
    """
    stamps = kfield.stamps
    th = np.asarray(theta_values, dtype=float)
    if th.shape != kfield.grid.node_shape:
        raise ValueError("attachment-time shape does not match the grid")
    if not np.all(np.isfinite(th)):
        raise HistoryError("attachment time is not finite on the whole box")
    slack = 1e-12 * (1.0 + abs(float(stamps[-1])))
    if float(th.max()) > stamps[-1] + slack:
        raise HistoryError(
            f"history too short: attachment time {th.max():.6g} exceeds the "
            f"last stamp {stamps[-1]:.6g}"
        )
    nv = kfield.values.shape[-1]
    per_node = kfield.values.reshape(len(stamps), -1, nv)
    thc = np.clip(th.ravel(), 0.0, stamps[-1])
    if len(stamps) == 1:
        alpha = np.zeros(kfield.grid.node_shape + (nv,))
    else:
        idx = np.clip(
            np.searchsorted(stamps, thc, side="right") - 1, 0, len(stamps) - 2
        )
        lam = ((thc - stamps[idx]) / (stamps[idx + 1] - stamps[idx]))[:, None]
        nodes = np.arange(thc.size)
        vals = (1.0 - lam) * per_node[idx, nodes] + lam * per_node[idx + 1, nodes]
        alpha = vals.reshape(kfield.grid.node_shape + (nv,))
    if prestress is not None:
        if tensor is None:
            raise ValueError("prestress given without an elastic tensor")
        alpha = alpha - tensor.apply_inverse(prestress)
    return BackstrainField(alpha, generation)


def smallness_factor(
    tensor_norm: float, coercivity: float, box_measure: float, k_l1: float, phi_l2: float
) -> float:
    """The data smallness product guarding short-horizon solvability."""
    return tensor_norm * math.sqrt(box_measure) * k_l1 * phi_l2 / coercivity


@dataclass(frozen=True)
class KernelBudget:
    """Budget constants derived from the kernels and the material data."""

    horizon: float
    k_l1_total: float
    k_derivative_l1: float
    k_at_zero: float
    phi_l2: float
    grad_phi_l2: float
    phi_h1: float
    smallness: float
    subinterval_k_l1: tuple[float, ...] = ()

    def sup_bound_coefficient(self) -> float:
        """Coefficient of the sup bound on the smoothed history."""
        return self.k_l1_total * self.phi_l2

    def time_lipschitz_coefficient(self) -> float:
        """Coefficient of the time-Lipschitz bound on the smoothed history."""
        return (self.k_derivative_l1 + self.k_at_zero) * self.phi_l2

    def lipschitz_budget(self, strain_bound: float, gamma_min: float) -> float:
        """W^(1,inf) budget for the backstrain given the strain sup bound."""
        return (
            self.k_l1_total * self.phi_h1 * strain_bound
            + (self.k_derivative_l1 + self.k_at_zero)
            * self.phi_l2
            * strain_bound
            / gamma_min
        )


def kernel_budget(
    kernel: BoundKernel,
    tensor,
    box_measure: float,
    horizon: float,
    n_subintervals: int | None = None,
) -> KernelBudget:
    """Evaluate the data-dependent budget constants for a kernel choice."""
    spec = kernel.spec
    k_l1 = spec.time_l1(0.0, horizon)
    subs = ()
    if n_subintervals:
        t0 = horizon / n_subintervals
        subs = tuple(
            spec.time_l1((j - 1) * t0, j * t0) for j in range(1, n_subintervals + 1)
        )
    eta = smallness_factor(
        tensor.frobenius_norm, tensor.coercivity, box_measure, k_l1, kernel.phi_l2
    )
    return KernelBudget(
        horizon=horizon,
        k_l1_total=k_l1,
        k_derivative_l1=spec.time_derivative_l1(horizon),
        k_at_zero=spec.time_at_zero,
        phi_l2=kernel.phi_l2,
        grad_phi_l2=kernel.grad_phi_l2,
        phi_h1=kernel.phi_h1,
        smallness=eta,
        subinterval_k_l1=subs,
    )
