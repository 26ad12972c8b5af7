"""Solution drivers for growth-coupled quasistatic elasticity.

Two entry points:

* ``solve_equilibrium_history``: given an attachment-time field, solve the
  equilibrium system at every stamp of the schedule with the backstrain
  induced by the converged strain history.  The fixed point is found by a
  Picard iteration marched over sub-intervals whose kernel mass keeps the
  iteration contractive; earlier sub-intervals stay frozen exactly.

* ``solve_coupled``: the outer fixed point on the backstrain.  Each outer
  iteration re-solves the front equation with the growth rate evaluated on
  the current backstrain iterate, then the equilibrium history on the new
  domains, and updates the backstrain from the result (optionally damped).
  Non-convergence within the iteration budget is a reportable outcome, not
  a crash.

``validate_config`` performs all model-assumption checks (labelled A1..A7,
see the README's model summary) plus the growth-containment and
kernel-support checks, and reports the smallness factor and contraction
factors of the schedule.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError, ConvergenceError
from .geometry import (
    CellMask,
    DomainClassParams,
    Grid,
    dilate_mask,
    docking_component,
    mask_distance,
    sublevel_mask,
)
from .eikonal import AttachmentField, GrowthLaw, evaluate_speed, solve_eikonal
from .elasticity import (
    AssembledSystem,
    ElasticTensor,
    KornEstimate,
    compute_strain,
    compute_stress,
    estimate_korn,
    vector_l2_gauss,
    voigt_duplication,
)
from .backstrain import (
    BackstrainField,
    BoundKernel,
    KernelBudget,
    KernelSpec,
    StrainHistory,
    convolve_K,
    evaluate_backstrain,
    kernel_budget,
)

__all__ = [
    "Schedule",
    "Forcing",
    "Problem",
    "Diagnostics",
    "SolutionRecord",
    "ValidationReport",
    "validate_config",
    "solve_equilibrium_history",
    "solve_coupled",
]


@dataclass(frozen=True)
class Schedule:
    """Time discretization and iteration budget of one simulation."""

    horizon: float
    dt: float
    n_subintervals: int | None = None
    max_inner: int = 60
    max_outer: int = 40
    inner_tol: float = 1e-10
    outer_tol: float = 1e-8
    damping: float = 1.0

    def __post_init__(self):
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive (A1)")
        if self.dt <= 0:
            raise ConfigError("time step must be positive")
        if abs(self.n_stamps * self.dt - self.horizon) > 1e-9 * self.horizon:
            raise ConfigError("horizon must be an integer multiple of dt")
        if not (0.0 < self.damping <= 1.0):
            raise ConfigError("damping must lie in (0, 1]")
        if self.n_subintervals is not None:
            if self.n_subintervals < 1 or self.n_stamps % self.n_subintervals:
                raise ConfigError(
                    "subinterval count must divide the number of stamps"
                )

    @property
    def n_stamps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def stamps(self) -> np.ndarray:
        return self.dt * np.arange(self.n_stamps + 1)


@dataclass(frozen=True)
class Forcing:
    """Body-force builders: constant vector, radial, or time-ramped."""

    kind: str
    vector: tuple[float, ...] | None = None
    magnitude: float = 0.0
    center: tuple[float, ...] | None = None
    ramp_time: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "radial", "ramp"):
            raise ConfigError(f"unknown forcing kind {self.kind!r}")
        if self.kind in ("constant", "ramp") and self.vector is None:
            raise ConfigError(f"{self.kind} forcing requires a vector")
        if self.kind == "radial" and self.center is None:
            raise ConfigError("radial forcing requires a center")
        if self.kind == "ramp" and self.ramp_time <= 0:
            raise ConfigError("ramp forcing requires ramp_time > 0 (A7)")

    def evaluate(self, grid: Grid, t: float) -> np.ndarray:
        out = np.zeros(grid.node_shape + (grid.dim,))
        if self.kind == "zero":
            return out
        if self.kind == "constant":
            out[:] = np.asarray(self.vector, dtype=float)
            return out
        if self.kind == "radial":
            out[:] = self.magnitude * (grid.node_coords() - np.asarray(self.center))
            return out
        factor = min(t / self.ramp_time, 1.0)
        out[:] = factor * np.asarray(self.vector, dtype=float)
        return out

    def is_zero(self) -> bool:
        if self.kind == "zero":
            return True
        if self.kind in ("constant", "ramp"):
            return not np.any(np.asarray(self.vector))
        return self.magnitude == 0.0


@dataclass
class Problem:
    """Materialized inputs of one simulation."""

    grid: Grid
    body: CellMask
    docking: CellMask
    tensor: ElasticTensor
    growth: GrowthLaw
    kernel: KernelSpec
    forcing: Forcing
    schedule: Schedule
    prestress: np.ndarray | None = None
    domain_params: DomainClassParams | None = None
    solver_rtol: float = 1e-8
    solver_maxiter: int = 10_000
    korn_tol: float = 1e-6


@dataclass
class Diagnostics:
    """Proof-constant values and convergence traces of one run."""

    smallness: float = math.nan
    strain_bound: float = math.nan
    lipschitz_budget: float = math.nan
    korn_initial: KornEstimate | None = None
    korn_family: list[tuple[int, float, float, float]] = field(default_factory=list)
    subinterval_factors: tuple[float, ...] = ()
    inner_trace: list[dict] = field(default_factory=list)
    outer_residuals: list[float] = field(default_factory=list)
    energy_identity_max_rel: float = 0.0
    wellposedness_min_margin: float = math.inf
    young_margin: float = math.inf
    time_lipschitz_margin: float = math.inf
    strain_sup: float = 0.0
    alpha_sup: float = 0.0
    alpha_w1inf: float = 0.0
    forcing_sup: float = 0.0
    n_outer: int = 0
    converged: bool = True
    wall_time: float = 0.0
    notes: list[str] = field(default_factory=list)

    @property
    def korn_family_spread(self) -> float:
        vals = [k[1] for k in self.korn_family]
        if not vals:
            return 1.0
        return max(vals) / min(vals)


@dataclass
class SolutionRecord:
    """Per-stamp fields and diagnostics of one simulation."""

    stamps: np.ndarray
    theta: AttachmentField | None
    masks: list[CellMask]
    displacements: list[np.ndarray]
    strains: list[np.ndarray]
    stresses: list[np.ndarray]
    backstrain: BackstrainField
    diagnostics: Diagnostics
    converged: bool = True


class ValidationReport:
    """Outcome of the configuration checks, with A-labelled failures."""

    def __init__(self):
        self.checks: list[tuple[str, bool, str]] = []
        self.smallness: float = math.nan
        self.subinterval_factors: tuple[float, ...] = ()

    def add(self, label: str, ok: bool, message: str):
        self.checks.append((label, ok, message))

    @property
    def ok(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def failures(self) -> list[str]:
        return [f"[{label}] {msg}" for label, ok, msg in self.checks if not ok]

    def ensure(self):
        if not self.ok:
            raise ConfigError("; ".join(self.failures()))


def validate_config(problem: Problem, estimate_constants: bool = True) -> ValidationReport:
    """Check every model assumption and report the budget constants."""
    rep = ValidationReport()
    grid = problem.grid
    h = grid.spacing
    sched = problem.schedule

    rep.add("A1", sched.horizon > 0, "horizon must be positive")
    rep.add(
        "A2",
        problem.tensor.coercivity > 0,
        "elasticity tensor must be symmetric positive definite",
    )

    body = problem.body
    structure = ndimage.generate_binary_structure(grid.dim, 1)
    n_body = ndimage.label(body.values, structure=structure)[1]
    rep.add(
        "A3",
        not body.is_empty() and n_body == 1,
        f"initial body must be nonempty and connected (components: {n_body})",
    )

    dock = problem.docking
    n_dock = ndimage.label(dock.values, structure=structure)[1]
    dock_ok = (
        not dock.is_empty()
        and n_dock == 1
        and dock.is_subset_of(body)
        and not (dock.values & body.boundary).any()
    )
    msg = "docking set must be nonempty, connected and strictly inside the body"
    if dock_ok and problem.domain_params is not None:
        margin = mask_distance(dock, body)
        needed = problem.domain_params.margin - 2 * h
        if margin < needed:
            dock_ok = False
            msg = (
                f"docking clearance {margin:.4g} is below the declared margin "
                f"{problem.domain_params.margin:.4g} (allowing 2h rasterization slack)"
            )
    rep.add("A4", dock_ok, msg)
    if problem.domain_params is not None:
        try:
            problem.domain_params.validate_against(dock)
            rep.add("A4-center", True, "")
        except ConfigError as exc:
            rep.add("A4-center", False, str(exc))

    law = problem.growth
    rep.add(
        "A5",
        0.0 < law.gamma_min < law.gamma_max,
        "growth-rate bounds must satisfy 0 < gamma_min < gamma_max strictly",
    )

    kernel_ok = True
    kernel_msg = ""
    bound = None
    try:
        bound = problem.kernel.bind(grid)
    except ConfigError as exc:
        kernel_ok = False
        kernel_msg = str(exc)
    rep.add("A6", kernel_ok, kernel_msg or "kernel admissible")

    forcing_ok = True
    try:
        f0 = problem.forcing.evaluate(grid, 0.0)
        forcing_ok = bool(np.all(np.isfinite(f0)))
    except ConfigError as exc:
        forcing_ok = False
    rep.add("A7", forcing_ok, "forcing must be finite and continuous in time")

    # growth containment: the body dilated by horizon * max rate must stay
    # inside the computational box, with space-kernel clearance on top
    reach = sched.horizon * law.gamma_max
    centers = body.cell_center_points()
    wall = np.minimum(
        (centers - grid.box_lo).min(axis=1), (grid.box_hi - centers).min(axis=1)
    ).min()
    rep.add(
        "growth-bound",
        wall >= reach,
        f"body dilated by horizon*max rate ({reach:.4g}) leaves the box "
        f"(wall clearance {wall:.4g}); enlarge the box or shrink the horizon",
    )
    rep.add(
        "kernel-margin",
        wall >= reach + problem.kernel.space_radius,
        f"space-kernel support (radius {problem.kernel.space_radius:.4g}) does "
        f"not fit between the grown body and the box boundary",
    )

    if problem.prestress is not None:
        rep.add(
            "prestress",
            problem.prestress.shape == grid.node_shape + (len(voigt_duplication(grid.dim)),)
            and bool(np.all(np.isfinite(problem.prestress))),
            "prestress field must be a finite nodal tensor field",
        )

    if estimate_constants and rep.ok and bound is not None:
        est = estimate_korn(body, dock, "both", tol=problem.korn_tol)
        n_sub = sched.n_subintervals or _auto_subintervals(
            problem, bound, est.combined
        )
        budget = kernel_budget(
            bound, problem.tensor, grid.box_measure, sched.horizon, n_sub
        )
        rep.smallness = budget.smallness
        rep.subinterval_factors = tuple(
            est.combined
            * problem.tensor.frobenius_norm
            / problem.tensor.coercivity
            * math.sqrt(grid.box_measure)
            * kj
            * bound.phi_l2
            for kj in budget.subinterval_k_l1
        )
    return rep


def _auto_subintervals(problem: Problem, bound: BoundKernel, combined: float) -> int:
    """Smallest divisor of the stamp count with all contraction factors <= 0.9."""
    sched = problem.schedule
    base = (
        combined
        * problem.tensor.frobenius_norm
        / problem.tensor.coercivity
        * math.sqrt(problem.grid.box_measure)
        * bound.phi_l2
    )
    m = sched.n_stamps
    for n in range(1, m + 1):
        if m % n:
            continue
        t0 = sched.horizon / n
        factors = [
            base * problem.kernel.time_l1((j - 1) * t0, j * t0) for j in range(1, n + 1)
        ]
        if all(q <= 0.9 for q in factors):
            return n
    worst = base * problem.kernel.time_l1(0.0, sched.dt)
    raise ConfigError(
        f"no subinterval length satisfies the contraction condition: even one "
        f"time step gives factor {worst:.3g}; reduce the kernel mass"
    )


def _stamp_masks(theta: AttachmentField | np.ndarray, problem: Problem) -> list[CellMask]:
    sched = problem.schedule
    masks = []
    dropped = 0
    for t in sched.stamps:
        m = sublevel_mask(theta, float(t), problem.body)
        filtered = docking_component(m, problem.docking)
        dropped += m.count - filtered.count
        masks.append(filtered)
    for a, b in zip(masks, masks[1:]):
        if not a.is_subset_of(b):
            raise AssertionError("growth masks are not nested")
    edge = np.zeros(problem.grid.cells, dtype=bool)
    for ax in range(problem.grid.dim):
        sl = [slice(None)] * problem.grid.dim
        sl[ax] = 0
        edge[tuple(sl)] = True
        sl[ax] = -1
        edge[tuple(sl)] = True
    if (masks[-1].values & edge).any():
        raise ConfigError(
            "growth reaches the boundary of the computational box; "
            "the bounding-box assumption is violated"
        )
    if dropped:
        warnings.warn(
            f"{dropped} cells in components detached from the docking set "
            "were excluded from the solves",
            stacklevel=3,
        )
    return masks


def solve_equilibrium_history(
    theta: AttachmentField,
    problem: Problem,
    inner_init: str = "zero",
    generation: int = 0,
    diagnostics: Diagnostics | None = None,
    full_diagnostics: bool = True,
) -> SolutionRecord:
    """Equilibrium at every stamp under a prescribed attachment-time field.

    Picard iteration on the strain history, marched over sub-intervals that
    satisfy the contraction condition; sub-intervals already solved are
    frozen exactly.  ``inner_init`` selects the first iterate of each new
    sub-interval: ``zero`` starts from rest, ``previous`` copies the last
    frozen stamp's displacement.
    """
    if inner_init not in ("zero", "previous"):
        raise ValueError("inner_init must be 'zero' or 'previous'")
    t_start = time.perf_counter()
    sched = problem.schedule
    grid = problem.grid
    diag = diagnostics if diagnostics is not None else Diagnostics()

    bound = problem.kernel.bind(grid)
    korn0 = estimate_korn(problem.body, problem.docking, "both", tol=problem.korn_tol)
    diag.korn_initial = korn0

    n_sub = sched.n_subintervals or _auto_subintervals(problem, bound, korn0.combined)
    budget = kernel_budget(
        bound, problem.tensor, grid.box_measure, sched.horizon, n_sub
    )
    base = (
        korn0.combined
        * problem.tensor.frobenius_norm
        / problem.tensor.coercivity
        * math.sqrt(grid.box_measure)
        * bound.phi_l2
    )
    factors = tuple(base * kj for kj in budget.subinterval_k_l1)
    diag.subinterval_factors = factors
    diag.smallness = budget.smallness
    offending = [
        (j + 1, q) for j, q in enumerate(factors) if q >= 1.0
    ]
    if offending:
        j, q = offending[0]
        raise ConfigError(
            f"contraction condition violated on subinterval {j}: factor "
            f"{q:.4g} >= 1; shorten the subintervals or reduce the kernel mass"
        )

    masks = _stamp_masks(theta, problem)
    systems = [
        AssembledSystem(m, problem.docking, problem.tensor) for m in masks
    ]
    stamps = sched.stamps
    n_stamps = sched.n_stamps
    forces = [problem.forcing.evaluate(grid, float(t)) for t in stamps]
    # the linear solves must resolve the fixed point below the Picard
    # tolerance, otherwise the sweep differences floor at solver noise
    rtol = min(problem.solver_rtol, 1e-2 * sched.inner_tol)

    theta_vals = theta.values if isinstance(theta, AttachmentField) else theta

    history = StrainHistory(grid)
    displacements: list[np.ndarray] = [None] * (n_stamps + 1)

    # stamp 0: the backstrain trace at attachment time zero is the prestress
    # contribution only, independent of the history
    zero_hist = StrainHistory(grid)
    zero_hist.append(0.0, np.zeros(grid.node_shape + (systems[0].nv,)))
    kf0 = convolve_K(zero_hist, bound)
    alpha0 = evaluate_backstrain(
        kf0, np.zeros(grid.node_shape), problem.tensor, problem.prestress
    )
    u0, info0 = systems[0].solve(
        alpha0.values, forces[0], rtol=rtol, maxiter=problem.solver_maxiter
    )
    displacements[0] = u0
    history.append(0.0, compute_strain(u0, masks[0]))

    stamps_per_sub = n_stamps // n_sub
    alpha_field = alpha0
    for j in range(1, n_sub + 1):
        m_lo = (j - 1) * stamps_per_sub + 1
        m_hi = j * stamps_per_sub
        t_end = float(stamps[m_hi])
        # initial iterate for the new stamps
        for m in range(m_lo, m_hi + 1):
            if inner_init == "previous":
                displacements[m] = displacements[m_lo - 1].copy()
            else:
                displacements[m] = np.zeros(grid.node_shape + (grid.dim,))
            history.append(float(stamps[m]), compute_strain(displacements[m], masks[m]))

        prev_diff = None
        bad_streak = 0
        for sweep in range(1, sched.max_inner + 1):
            kf = convolve_K(history, bound)
            th_clamped = np.minimum(theta_vals, t_end)
            alpha_field = evaluate_backstrain(
                kf, th_clamped, problem.tensor, problem.prestress, generation
            )
            diff = 0.0
            for m in range(m_lo, m_hi + 1):
                u_new, info = systems[m].solve(
                    alpha_field.values,
                    forces[m],
                    rtol=rtol,
                    maxiter=problem.solver_maxiter,
                    x0=displacements[m] if inner_init == "previous" else None,
                )
                diff = max(
                    diff, systems[m].strain_norm(u_new - displacements[m])
                )
                displacements[m] = u_new
                history.replace(m, compute_strain(u_new, masks[m]))
            ratio = diff / prev_diff if prev_diff not in (None, 0.0) else math.nan
            diag.inner_trace.append(
                {
                    "outer": generation,
                    "subinterval": j,
                    "sweep": sweep,
                    "difference": diff,
                    "ratio": ratio,
                }
            )
            if prev_diff is not None and prev_diff > 0 and diff >= prev_diff:
                bad_streak += 1
                if bad_streak >= 3:
                    raise ConvergenceError(
                        f"inner iteration diverges on subinterval {j}: "
                        f"difference {diff:.3e} after {sweep} sweeps",
                        residual=diff,
                        iterations=sweep,
                    )
            else:
                bad_streak = 0
            if diff <= sched.inner_tol:
                break
            prev_diff = diff
        else:
            raise ConvergenceError(
                f"inner iteration did not reach {sched.inner_tol:.1e} within "
                f"{sched.max_inner} sweeps on subinterval {j}",
                residual=diff,
                iterations=sched.max_inner,
            )

    # consistency pass: freeze the final backstrain and re-solve every stamp
    # against it, so the recorded fields satisfy their equations exactly
    kf = convolve_K(history, bound)
    th_clamped = np.minimum(theta_vals, float(stamps[-1]))
    alpha_field = evaluate_backstrain(
        kf, th_clamped, problem.tensor, problem.prestress, generation
    )
    energy_rel = 0.0
    for m in range(0, n_stamps + 1):
        u_new, info = systems[m].solve(
            alpha_field.values, forces[m], rtol=rtol,
            maxiter=problem.solver_maxiter,
        )
        displacements[m] = u_new
        history.replace(m, compute_strain(u_new, masks[m]))
        internal = systems[m].energy(u_new) - float(
            systems[m].restrict(u_new) @ systems[m].load_vector(alpha_field.values, None)
        )
        external = float(
            systems[m].restrict(u_new) @ systems[m].load_vector(None, forces[m])
        )
        scale = max(abs(internal), abs(external), 1e-300)
        if internal != 0.0 or external != 0.0:
            energy_rel = max(energy_rel, abs(internal - external) / scale)
    diag.energy_identity_max_rel = max(diag.energy_identity_max_rel, energy_rel)

    stresses = [
        compute_stress(displacements[m], alpha_field.values, problem.tensor, masks[m])
        for m in range(n_stamps + 1)
    ]

    if full_diagnostics:
        _finalize_diagnostics(
            diag, problem, bound, budget, masks, systems, displacements,
            history, kf, alpha_field, forces,
        )
    diag.wall_time += time.perf_counter() - t_start

    return SolutionRecord(
        stamps=stamps,
        theta=theta if isinstance(theta, AttachmentField) else None,
        masks=masks,
        displacements=displacements,
        strains=list(history.fields),
        stresses=stresses,
        backstrain=alpha_field,
        diagnostics=diag,
        converged=True,
    )


def _finalize_diagnostics(
    diag, problem, bound, budget, masks, systems, displacements, history,
    kf, alpha_field, forces,
):
    grid = problem.grid
    dup = voigt_duplication(grid.dim)

    diag.forcing_sup = max(
        vector_l2_gauss(grid, f) for f in forces
    )
    diag.strain_sup = max(
        systems[m].strain_norm(displacements[m]) for m in range(len(systems))
    )

    # per-stamp inequality constants
    diag.korn_family = []
    for m, mask in enumerate(masks):
        est = estimate_korn(mask, problem.docking, "both", tol=problem.korn_tol)
        diag.korn_family.append(
            (m, est.korn_constant, est.poincare_constant, est.combined)
        )
    combined_max = max(k[3] for k in diag.korn_family)

    eta = budget.smallness
    if eta < 1.0:
        diag.strain_bound = (
            combined_max * diag.forcing_sup / (problem.tensor.coercivity * (1.0 - eta))
        )
        diag.lipschitz_budget = budget.lipschitz_budget(
            diag.strain_bound, problem.growth.gamma_min
        )
    else:
        diag.strain_bound = math.inf
        diag.lipschitz_budget = math.inf

    # well-posedness margin per stamp, using that stamp's own constant
    margin = math.inf
    for m, syst in enumerate(systems):
        lhs = problem.tensor.coercivity * syst.strain_norm(displacements[m])
        rhs = (
            problem.tensor.frobenius_norm * syst.tensor_l2(alpha_field.values)
            + diag.korn_family[m][3] * vector_l2_gauss(grid, forces[m])
        )
        scale = max(lhs, rhs, 1e-300)
        margin = min(margin, (rhs - lhs) / scale)
    diag.wellposedness_min_margin = min(diag.wellposedness_min_margin, margin)

    # sup bound of the smoothed history (Young) and its time-Lipschitz bound
    sup_hist = history.sup_nodal_norm
    young_bound = budget.sup_bound_coefficient() * sup_hist
    worst = max(kf.sup_frobenius(i) for i in range(len(kf.stamps)))
    diag.young_margin = young_bound - worst
    lip_coeff = budget.time_lipschitz_coefficient() * sup_hist
    min_gap = math.inf
    stamps = kf.stamps
    for i in range(len(stamps)):
        for j in range(i + 1, len(stamps)):
            d = kf.values[j] - kf.values[i]
            sup = float(np.sqrt((d**2 * dup).sum(axis=-1)).max())
            min_gap = min(min_gap, lip_coeff * (stamps[j] - stamps[i]) - sup)
    diag.time_lipschitz_margin = min_gap

    # discrete W(1,inf) seminorm of the backstrain (central differences)
    a = alpha_field.values
    diag.alpha_sup = float(np.sqrt((a**2 * dup).sum(axis=-1)).max())
    grad_sq = np.zeros(tuple(s - 2 for s in grid.node_shape))
    inner = tuple(slice(1, -1) for _ in range(grid.dim))
    for ax in range(grid.dim):
        lo = list(inner)
        hi = list(inner)
        lo[ax] = slice(0, -2)
        hi[ax] = slice(2, None)
        d_ax = (a[tuple(hi)] - a[tuple(lo)]) / (2 * grid.spacing)
        grad_sq += (d_ax**2 * dup).sum(axis=-1)
    diag.alpha_w1inf = diag.alpha_sup + float(np.sqrt(grad_sq).max())


def solve_coupled(problem: Problem) -> SolutionRecord:
    """Outer fixed point coupling growth to the equilibrium history.

    Refuses to run when the smallness factor is at least one (the kernel
    mass must shrink first).  Outer non-convergence returns the best
    iterate flagged as non-converged rather than raising.
    """
    t_start = time.perf_counter()
    grid = problem.grid
    sched = problem.schedule
    bound = problem.kernel.bind(grid)
    budget0 = kernel_budget(bound, problem.tensor, grid.box_measure, sched.horizon)
    if budget0.smallness >= 1.0:
        raise ConfigError(
            f"smallness factor {budget0.smallness:.4g} >= 1: reduce the time-kernel "
            f"mass by a factor greater than {budget0.smallness:.4g} (or shorten the "
            "horizon) before running the coupled mode"
        )

    nv = len(voigt_duplication(grid.dim))
    if problem.prestress is not None:
        alpha_tilde = -problem.tensor.apply_inverse(problem.prestress)
    else:
        alpha_tilde = np.zeros(grid.node_shape + (nv,))

    diag = Diagnostics()
    dup = voigt_duplication(grid.dim)
    record = None
    theta = None
    converged = False
    for outer in range(1, sched.max_outer + 1):
        speed = evaluate_speed(problem.growth, alpha_tilde, grid, generation=outer)
        theta = solve_eikonal(speed, problem.body)
        record = solve_equilibrium_history(
            theta,
            problem,
            generation=outer,
            diagnostics=diag,
            full_diagnostics=False,
        )
        alpha_new = record.backstrain.values
        step = alpha_new - alpha_tilde
        change = float(np.sqrt((step**2 * dup).sum(axis=-1)).max()) * sched.damping
        diag.outer_residuals.append(change)
        alpha_tilde = alpha_tilde + sched.damping * step
        diag.n_outer = outer
        if change <= sched.outer_tol:
            converged = True
            break

    # final verification pass with full diagnostics on the converged state
    speed = evaluate_speed(problem.growth, alpha_tilde, grid, generation=diag.n_outer)
    theta = solve_eikonal(speed, problem.body)
    record = solve_equilibrium_history(
        theta,
        problem,
        generation=diag.n_outer,
        diagnostics=diag,
        full_diagnostics=True,
    )
    diag.converged = converged
    diag.wall_time = time.perf_counter() - t_start
    record.converged = converged
    if not converged:
        warnings.warn(
            f"outer iteration did not reach {sched.outer_tol:.1e} within "
            f"{sched.max_outer} iterations (last change "
            f"{diag.outer_residuals[-1]:.3e}); returning the best iterate",
            stacklevel=2,
        )
    return record
