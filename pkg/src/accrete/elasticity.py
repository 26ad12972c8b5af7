"""Quasistatic linear elasticity on masked grids.

Discretization: Q1 (bi/trilinear) elements on the cells of a mask, full
Gauss quadrature (exact for the bilinear forms used here), docking
constraint enforced by eliminating constrained rows and columns, natural
boundary conditions left variational.  The linear solver is diagonally
preconditioned conjugate gradients.

Field conventions used throughout the package:
  * displacement / force fields: arrays of shape ``node_shape + (d,)``
  * symmetric tensor fields: arrays of shape ``node_shape + (nv,)`` holding
    the plain components (xx, yy, xy) in 2D and (xx, yy, zz, yz, xz, xy)
    in 3D; shear entries are stored once, without engineering factors.

Internally the elastic tensor is kept in Mandel form, so quadratic forms
in the stored matrix reproduce the Frobenius contraction of the underlying
4-tensor exactly: the coercivity constant is its smallest eigenvalue and
the recorded tensor norm its Frobenius norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .errors import ConfigError, ConvergenceError
from .geometry import CellMask, Grid

__all__ = [
    "ElasticTensor",
    "KornEstimate",
    "AssembledSystem",
    "n_voigt",
    "voigt_duplication",
    "solve_equilibrium",
    "compute_strain",
    "compute_stress",
    "estimate_korn",
    "nodal_tensor_l2",
    "tensor_l2_gauss",
    "vector_l2_gauss",
]


def n_voigt(dim: int) -> int:
    return dim * (dim + 1) // 2


def voigt_duplication(dim: int) -> np.ndarray:
    """Multiplicity of each stored component in the full symmetric tensor."""
    return np.array([1.0] * dim + [2.0] * (n_voigt(dim) - dim))


def _mandel_scale(dim: int) -> np.ndarray:
    return np.sqrt(voigt_duplication(dim))


class ElasticTensor:
    """Symmetric positive definite elasticity tensor in Mandel storage."""

    def __init__(self, mandel: np.ndarray, dim: int):
        mandel = np.asarray(mandel, dtype=float)
        nv = n_voigt(dim)
        if mandel.shape != (nv, nv):
            raise ConfigError(f"elastic matrix must be {nv}x{nv} for d={dim}")
        if not np.allclose(mandel, mandel.T, rtol=0, atol=1e-12):
            raise ConfigError("elasticity tensor must be symmetric (A2)")
        eigs = np.linalg.eigvalsh(0.5 * (mandel + mandel.T))
        if eigs[0] <= 0:
            raise ConfigError(
                f"elasticity tensor is not positive definite (A2): "
                f"smallest eigenvalue {eigs[0]:.3e}"
            )
        self.dim = dim
        self.mandel = 0.5 * (mandel + mandel.T)
        self.coercivity = float(eigs[0])
        self.frobenius_norm = float(np.linalg.norm(self.mandel))
        self._inv = np.linalg.inv(self.mandel)
        self._scale = _mandel_scale(dim)

    @classmethod
    def isotropic(cls, lam: float, mu: float, dim: int) -> "ElasticTensor":
        nv = n_voigt(dim)
        m = np.zeros((nv, nv))
        m[:dim, :dim] = lam
        m[np.arange(dim), np.arange(dim)] += 2 * mu
        m[np.arange(dim, nv), np.arange(dim, nv)] = 2 * mu
        return cls(m, dim)

    @classmethod
    def from_voigt(cls, matrix: np.ndarray, dim: int) -> "ElasticTensor":
        """Build from a stiffness matrix in engineering Voigt convention."""
        matrix = np.asarray(matrix, dtype=float)
        return cls(_eng_to_mandel(matrix, dim), dim)

    def apply(self, field: np.ndarray) -> np.ndarray:
        """Apply the tensor to a plain-Voigt field: stress = C : strain."""
        mand = field * self._scale
        out = mand @ self.mandel.T
        return out / self._scale

    def apply_inverse(self, field: np.ndarray) -> np.ndarray:
        """Apply the compliance tensor to a plain-Voigt field."""
        mand = field * self._scale
        out = mand @ self._inv.T
        return out / self._scale


def _eng_to_mandel(matrix: np.ndarray, dim: int) -> np.ndarray:
    nv = n_voigt(dim)
    if matrix.shape != (nv, nv):
        raise ConfigError(f"stiffness matrix must be {nv}x{nv} for d={dim}")
    s = _mandel_scale(dim)
    # sigma_mandel = S sigma_voigt and eps_eng = S eps_mandel
    return np.diag(s) @ matrix @ np.diag(s)


@dataclass(frozen=True)
class KornEstimate:
    """Numerically estimated inequality constants of an admissible space."""

    korn_constant: float
    poincare_constant: float
    combined: float
    iterations: int
    residual: float


@lru_cache(maxsize=8)
def _reference_element(dim: int, h: float):
    """Gauss data and element matrices on a uniform cell of size h."""
    corners = list(np.ndindex(*(2,) * dim))
    signs = 2.0 * np.array(corners) - 1.0  # (nc, dim) in {-1, +1}
    g = 1.0 / math.sqrt(3.0)
    gauss = np.array(list(np.ndindex(*(2,) * dim))) * 2.0 * g - g  # (ng, dim)
    weight = (h / 2.0) ** dim

    nc = len(corners)
    ng = len(gauss)
    shape = np.empty((ng, nc))
    grad = np.empty((ng, nc, dim))
    for q, xi in enumerate(gauss):
        for a in range(nc):
            terms = 0.5 * (1.0 + xi * signs[a])
            shape[q, a] = np.prod(terms)
            for i in range(dim):
                others = np.prod(np.delete(terms, i))
                grad[q, a, i] = (signs[a, i] / 2.0) * others * (2.0 / h)
    # gradients at the cell center (average strain of the Q1 field)
    grad_center = np.empty((nc, dim))
    for a in range(nc):
        terms = np.full(dim, 0.5)
        for i in range(dim):
            others = np.prod(np.delete(terms, i))
            grad_center[a, i] = (signs[a, i] / 2.0) * others * (2.0 / h)

    nv = n_voigt(dim)
    sqrt2 = math.sqrt(2.0)
    pairs = _shear_pairs(dim)

    def b_matrix(dn, mandel):
        b = np.zeros((nv, nc * dim))
        for a in range(nc):
            for i in range(dim):
                b[i, a * dim + i] = dn[a, i]
            for r, (i, j) in enumerate(pairs):
                fac = 1.0 / sqrt2 if mandel else 0.5
                b[dim + r, a * dim + i] += fac * dn[a, j]
                b[dim + r, a * dim + j] += fac * dn[a, i]
        return b

    b_gauss = np.stack([b_matrix(grad[q], mandel=True) for q in range(ng)])
    b_center_plain = b_matrix(grad_center, mandel=False)

    e_elem = weight * np.einsum("qia,qib->ab", b_gauss, b_gauss)
    g_elem = np.zeros((nc * dim, nc * dim))
    dot = weight * np.einsum("qai,qbi->ab", grad, grad)
    for i in range(dim):
        g_elem[i::dim, i::dim] = dot
    mass_scalar = weight * np.einsum("qa,qb->ab", shape, shape)
    m_elem = np.zeros((nc * dim, nc * dim))
    for i in range(dim):
        m_elem[i::dim, i::dim] = mass_scalar

    return {
        "corners": np.array(corners),
        "shape": shape,
        "b_gauss": b_gauss,
        "b_center_plain": b_center_plain,
        "e_elem": e_elem,
        "g_elem": g_elem,
        "m_elem": m_elem,
        "mass_scalar": mass_scalar,
        "weight": weight,
    }


def _shear_pairs(dim: int):
    if dim == 2:
        return [(0, 1)]
    return [(1, 2), (0, 2), (0, 1)]


def _cell_node_ids(grid: Grid, cells_idx: np.ndarray, corners: np.ndarray):
    """Flat node ids of the corners of each cell, shape (ncells, 2^d)."""
    pos = cells_idx[:, None, :] + corners[None, :, :]
    return np.ravel_multi_index(
        tuple(pos[..., i] for i in range(grid.dim)), grid.node_shape
    )


class AssembledSystem:
    """Assembled Q1 operators of one mask/docking pair.

    Exposes the stiffness, strain-Gram, gradient-Gram and mass matrices on
    the free (active minus docked) degrees of freedom, plus the load
    assembly and the Gauss-quadrature norms that the well-posedness and
    contraction diagnostics rely on.
    """

    def __init__(self, mask: CellMask, docking: CellMask, tensor: ElasticTensor):
        grid = mask.grid
        if docking.grid != grid:
            raise ConfigError("mask and docking live on different grids")
        if docking.is_empty():
            raise ConfigError("empty docking set: rigid motions unfiltered")
        if not docking.is_subset_of(mask):
            raise ConfigError("docking set must be contained in the body mask")
        if tensor.dim != grid.dim:
            raise ConfigError("elastic tensor dimension does not match the grid")

        self.grid = grid
        self.mask = mask
        self.docking = docking
        self.tensor = tensor
        self.dim = grid.dim
        self.nv = n_voigt(grid.dim)
        self.ref = _reference_element(grid.dim, grid.spacing)

        self.cells_idx = np.argwhere(mask.values)
        self.node_ids = _cell_node_ids(grid, self.cells_idx, self.ref["corners"])

        active = np.zeros(grid.n_nodes, dtype=bool)
        active[self.node_ids.ravel()] = True
        docked = docking.node_hull.ravel()
        self.free = active & ~docked
        self.n_free = int(self.free.sum())
        self.dof_of_node = np.full(grid.n_nodes, -1, dtype=np.int64)
        self.dof_of_node[self.free] = np.arange(self.n_free)

        d = self.dim
        elem_dofs = (self.node_ids[:, :, None] * d + np.arange(d)).reshape(
            len(self.cells_idx), -1
        )
        free_dof_map = np.full(grid.n_nodes * d, -1, dtype=np.int64)
        free_nodes_flat = np.flatnonzero(self.free)
        for i in range(d):
            free_dof_map[free_nodes_flat * d + i] = self.dof_of_node[free_nodes_flat] * d + i
        self.elem_dofs = elem_dofs
        self._elem_free = free_dof_map[elem_dofs]  # -1 where constrained/off

        self.n_free_dofs = self.n_free * d
        c_m = tensor.mandel
        k_elem = self.ref["weight"] * np.einsum(
            "qia,ij,qjb->ab", self.ref["b_gauss"], c_m, self.ref["b_gauss"]
        )
        self.k_elem = k_elem
        self.K = self._assemble(k_elem)
        self.E = self._assemble(self.ref["e_elem"])
        self.G = self._assemble(self.ref["g_elem"])
        self.M = self._assemble(self.ref["m_elem"])
        self.jacobi = self.K.diagonal()
        if np.any(self.jacobi <= 0):
            raise ConfigError("stiffness diagonal not positive; mask too thin?")

    def _assemble(self, elem: np.ndarray) -> sparse.csr_matrix:
        rows = np.broadcast_to(
            self._elem_free[:, :, None], self._elem_free.shape + self._elem_free.shape[1:2]
        )
        cols = np.broadcast_to(
            self._elem_free[:, None, :], rows.shape
        )
        data = np.broadcast_to(elem[None, :, :], rows.shape)
        valid = (rows >= 0) & (cols >= 0)
        mat = sparse.coo_matrix(
            (data[valid], (rows[valid], cols[valid])),
            shape=(self.n_free_dofs, self.n_free_dofs),
        )
        return mat.tocsr()

    # -- field gathering -------------------------------------------------

    def _gather_elem(self, field: np.ndarray, ncomp: int) -> np.ndarray:
        flat = field.reshape(-1, ncomp)
        return flat[self.node_ids]  # (ncells, nc, ncomp)

    def restrict(self, field: np.ndarray) -> np.ndarray:
        """Free-dof vector of a nodal vector field."""
        flat = field.reshape(-1, self.dim)
        return flat[self.free].ravel()

    def extend(self, vec: np.ndarray) -> np.ndarray:
        """Nodal vector field from a free-dof vector (zeros elsewhere)."""
        out = np.zeros((self.grid.n_nodes, self.dim))
        out[self.free] = vec.reshape(-1, self.dim)
        return out.reshape(self.grid.node_shape + (self.dim,))

    # -- loads ------------------------------------------------------------

    def load_vector(self, alpha: np.ndarray | None, f: np.ndarray | None) -> np.ndarray:
        """Assemble the right-hand side from backstrain and body force."""
        b = np.zeros(self.n_free_dofs)
        nc = self.node_ids.shape[1]
        if f is not None:
            fe = self._gather_elem(f, self.dim)  # (K, nc, d)
            contrib = np.einsum("ab,kbd->kad", self.ref["mass_scalar"], fe)
            self._scatter(b, contrib.reshape(len(fe), nc * self.dim))
        if alpha is not None:
            scale = _mandel_scale(self.dim)
            ae = self._gather_elem(alpha, self.nv) * scale  # mandel components
            c_m = self.tensor.mandel
            # sum_g w B_g^T C (N_g alpha): alpha at gauss = shape @ corner values
            a_gauss = np.einsum("qa,kav->kqv", self.ref["shape"], ae)
            sig = np.einsum("ij,kqj->kqi", c_m, a_gauss)
            contrib = self.ref["weight"] * np.einsum(
                "qia,kqi->ka", self.ref["b_gauss"], sig
            )
            self._scatter(b, contrib)
        return b

    def _scatter(self, b: np.ndarray, contrib: np.ndarray):
        dofs = self._elem_free
        valid = dofs >= 0
        np.add.at(b, dofs[valid], contrib[valid])

    # -- norms (Gauss quadrature over the mask cells) ---------------------

    def strain_norm(self, u: np.ndarray) -> float:
        v = self.restrict(u)
        return math.sqrt(max(0.0, float(v @ (self.E @ v))))

    def grad_norm(self, u: np.ndarray) -> float:
        v = self.restrict(u)
        return math.sqrt(max(0.0, float(v @ (self.G @ v))))

    def disp_norm(self, u: np.ndarray) -> float:
        v = self.restrict(u)
        return math.sqrt(max(0.0, float(v @ (self.M @ v))))

    def energy(self, u: np.ndarray) -> float:
        v = self.restrict(u)
        return float(v @ (self.K @ v))

    def tensor_l2(self, alpha: np.ndarray) -> float:
        """Gauss-quadrature L2 norm of a nodal Voigt field over the mask."""
        return _tensor_l2_cells(self.grid, alpha, self.node_ids, self.ref)

    def solve(
        self,
        alpha: np.ndarray | None,
        f: np.ndarray | None,
        rtol: float = 1e-8,
        maxiter: int = 10_000,
        x0: np.ndarray | None = None,
    ) -> tuple[np.ndarray, dict]:
        """PCG solve of the equilibrium system; returns (u, info)."""
        b = self.load_vector(alpha, f)
        bnorm = float(np.linalg.norm(b))
        if bnorm == 0.0:
            u = self.extend(np.zeros(self.n_free_dofs))
            return u, {"iterations": 0, "residual": 0.0, "rhs_norm": 0.0}
        pre = spla.LinearOperator(
            (self.n_free_dofs, self.n_free_dofs),
            matvec=lambda x: x / self.jacobi,
        )
        iters = 0

        def count(_):
            nonlocal iters
            iters += 1

        sol = self.restrict(x0) if x0 is not None else None
        res = math.inf
        # the recursively updated residual inside CG can drift a hair above
        # the true one at the stopping point; restarting from the current
        # iterate polishes it below the contract
        for _ in range(3):
            sol, info = spla.cg(
                self.K, b, x0=sol, rtol=rtol, atol=0.0, maxiter=maxiter, M=pre,
                callback=count,
            )
            res = float(np.linalg.norm(self.K @ sol - b))
            if info == 0 and res <= rtol * bnorm:
                break
        else:
            raise ConvergenceError(
                f"conjugate gradients failed: residual {res:.3e} vs "
                f"tolerance {rtol * bnorm:.3e} after {iters} iterations",
                residual=res,
                iterations=iters,
            )
        return self.extend(sol), {
            "iterations": iters,
            "residual": res,
            "rhs_norm": bnorm,
        }


def solve_equilibrium(
    mask: CellMask,
    docking: CellMask,
    tensor: ElasticTensor,
    alpha: np.ndarray | None,
    f: np.ndarray | None,
    rtol: float = 1e-8,
    maxiter: int = 10_000,
    x0: np.ndarray | None = None,
) -> np.ndarray:
    """Solve the weak equilibrium system on a masked domain.

    Returns the nodal displacement, zero on the docking nodes and outside
    the mask.  Raises ``ConvergenceError`` when conjugate gradients do not
    reach ``|K u - b| <= rtol |b|``.
    """
    system = AssembledSystem(mask, docking, tensor)
    u, _ = system.solve(alpha, f, rtol=rtol, maxiter=maxiter, x0=x0)
    return u


def compute_strain(u: np.ndarray, mask: CellMask) -> np.ndarray:
    """Cell-centered Q1 strain scattered to nodes, zero outside the mask.

    Each mask cell contributes its center strain to its corner nodes with
    weight ``2^-d``, so interior nodes of the mask carry the plain average
    of the neighboring cell values and the nodal L2 norm of the result
    never exceeds the quadrature norm of the underlying strain.
    """
    grid = mask.grid
    d = grid.dim
    nv = n_voigt(d)
    ref = _reference_element(d, grid.spacing)
    cells_idx = np.argwhere(mask.values)
    out = np.zeros((grid.n_nodes, nv))
    if len(cells_idx) == 0:
        return out.reshape(grid.node_shape + (nv,))
    node_ids = _cell_node_ids(grid, cells_idx, ref["corners"])
    ue = u.reshape(-1, d)[node_ids].reshape(len(cells_idx), -1)
    eps_c = ue @ ref["b_center_plain"].T  # (ncells, nv) plain components
    share = eps_c / (2**d)
    for corner in range(node_ids.shape[1]):
        np.add.at(out, node_ids[:, corner], share)
    return out.reshape(grid.node_shape + (nv,))


def compute_stress(
    u: np.ndarray, alpha: np.ndarray | None, tensor: ElasticTensor, mask: CellMask
) -> np.ndarray:
    """Stress from the constitutive law: C applied to (strain - backstrain)."""
    eps = compute_strain(u, mask)
    if alpha is not None:
        eps = eps - alpha
    return tensor.apply(eps)


def _power_iteration(a_mat, b_mat, tol, maxiter, seed=0):
    """Largest generalized eigenvalue of ``a v = lambda b v`` (both SPD)."""
    solve_b = spla.splu(b_mat.tocsc()).solve
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(a_mat.shape[0])
    v /= math.sqrt(v @ (b_mat @ v))
    best = math.inf
    stall = 0
    lam = 0.0
    for it in range(1, maxiter + 1):
        av = a_mat @ v
        bv = b_mat @ v
        lam = float(v @ av) / float(v @ bv)
        resid = float(np.linalg.norm(av - lam * bv)) / max(
            float(np.linalg.norm(av)), 1e-300
        )
        if resid <= tol:
            return lam, it, resid
        if resid < 0.999 * best:
            best = resid
            stall = 0
        else:
            stall += 1
            if stall > 400:
                raise ConvergenceError(
                    f"eigen iteration stagnated at residual {resid:.3e}",
                    residual=resid,
                    iterations=it,
                )
        w = solve_b(av)
        v = w / math.sqrt(max(w @ (b_mat @ w), 1e-300))
    raise ConvergenceError(
        f"eigen iteration did not reach tolerance {tol:.1e} "
        f"(last residual {resid:.3e})",
        residual=resid,
        iterations=maxiter,
    )


def estimate_korn(
    mask: CellMask,
    docking: CellMask,
    mode: str = "both",
    tol: float = 1e-6,
    maxiter: int = 50_000,
) -> KornEstimate:
    """Estimate Korn and Poincare constants of the admissible space.

    ``korn``: the supremum of grad-norm over strain-norm; ``poincare``: the
    supremum of displacement-norm over grad-norm; ``both`` additionally
    reports the combined constant ``sqrt(poincare^2 + 1) * korn``.  Each
    supremum is the top generalized eigenvalue of the assembled quadratic
    forms, found by power iteration with a relative eigenvalue residual of
    ``tol``.
    """
    if mode not in ("korn", "poincare", "both"):
        raise ValueError(f"unknown mode {mode!r}")
    # the tensor only provides the quadratic forms here; any SPD one works
    system = AssembledSystem(mask, docking, ElasticTensor.isotropic(1.0, 1.0, mask.grid.dim))
    korn = poincare = float("nan")
    iters = 0
    resid = 0.0
    if mode in ("korn", "both"):
        lam, it, r = _power_iteration(system.G, system.E, tol, maxiter)
        korn = math.sqrt(lam)
        iters += it
        resid = max(resid, r)
    if mode in ("poincare", "both"):
        lam, it, r = _power_iteration(system.M, system.G, tol, maxiter)
        poincare = math.sqrt(lam)
        iters += it
        resid = max(resid, r)
    combined = (
        math.sqrt(poincare**2 + 1.0) * korn if mode == "both" else float("nan")
    )
    return KornEstimate(korn, poincare, combined, iters, resid)


# -- standalone Gauss and nodal norms -------------------------------------


def _tensor_l2_cells(grid, alpha, node_ids, ref) -> float:
    scale = _mandel_scale(grid.dim)
    ae = alpha.reshape(-1, n_voigt(grid.dim))[node_ids] * scale
    a_gauss = np.einsum("qa,kav->kqv", ref["shape"], ae)
    val = ref["weight"] * float(np.sum(a_gauss**2))
    return math.sqrt(val)


def tensor_l2_gauss(grid: Grid, alpha: np.ndarray, mask: CellMask | None = None) -> float:
    """Gauss-quadrature L2 norm of a nodal Voigt field over mask cells.

    With ``mask=None`` the norm is taken over the whole box.
    """
    ref = _reference_element(grid.dim, grid.spacing)
    if mask is None:
        cells_idx = np.argwhere(np.ones(grid.cells, dtype=bool))
    else:
        cells_idx = np.argwhere(mask.values)
    node_ids = _cell_node_ids(grid, cells_idx, ref["corners"])
    return _tensor_l2_cells(grid, alpha, node_ids, ref)


def vector_l2_gauss(grid: Grid, field: np.ndarray, mask: CellMask | None = None) -> float:
    """Gauss-quadrature L2 norm of a nodal vector field over mask cells."""
    ref = _reference_element(grid.dim, grid.spacing)
    if mask is None:
        cells_idx = np.argwhere(np.ones(grid.cells, dtype=bool))
    else:
        cells_idx = np.argwhere(mask.values)
    node_ids = _cell_node_ids(grid, cells_idx, ref["corners"])
    fe = field.reshape(-1, grid.dim)[node_ids]  # (K, nc, d)
    f_gauss = np.einsum("qa,kad->kqd", ref["shape"], fe)
    return math.sqrt(ref["weight"] * float(np.sum(f_gauss**2)))


def nodal_tensor_l2(grid: Grid, alpha: np.ndarray) -> float:
    """Nodal (rectangle-rule) L2 norm of a Voigt field over the whole box."""
    w = voigt_duplication(grid.dim)
    val = grid.spacing**grid.dim * float(np.sum(alpha**2 * w))
    return math.sqrt(val)
