"""Plane-strain linear elasticity on the solid cells of a structured quad grid.

Bilinear four-node elements, one per solid cell. Element-local node order is
counter-clockwise from the bottom-left corner, each node contributing
``(ux, uy)`` in that order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from stresslab.errors import SingularSystem
from stresslab.geometry import GeometryMask, GridSpec, ProblemSpec, distribute_load, node_index
from stresslab.material import Material, elasticity_matrix

# natural coordinates of the four element nodes, CCW from bottom-left
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])


def strain_displacement(xi: float, eta: float, size: float = 1.0) -> np.ndarray:
    """3x8 strain-displacement matrix of a square element of side ``size``."""
    dn_dxi = _XI * (1.0 + eta * _ETA) / 4.0
    dn_deta = _ETA * (1.0 + xi * _XI) / 4.0
    dn_dx = dn_dxi * 2.0 / size
    dn_dy = dn_deta * 2.0 / size
    B = np.zeros((3, 8))
    B[0, 0::2] = dn_dx
    B[1, 1::2] = dn_dy
    B[2, 0::2] = dn_dy
    B[2, 1::2] = dn_dx
    return B


@lru_cache(maxsize=32)
def _element_stiffness(material: Material, size: float, quadrature: str) -> np.ndarray:
    C = elasticity_matrix(material)
    jac = (size / 2.0) ** 2
    if quadrature == "gauss2":
        g = 1.0 / np.sqrt(3.0)
        points = [(-g, -g), (g, -g), (g, g), (-g, g)]
        weight = 1.0
    elif quadrature == "centroid":
        points = [(0.0, 0.0)]
        weight = 4.0
    else:
        raise ValueError(f"unknown quadrature {quadrature!r}")
    K = np.zeros((8, 8))
    for xi, eta in points:
        B = strain_displacement(xi, eta, size)
        K += weight * jac * (B.T @ C @ B)
    K = 0.5 * (K + K.T)
    K.setflags(write=False)
    return K


def element_stiffness(material: Material, grid: GridSpec = GridSpec(), quadrature: str = "gauss2") -> np.ndarray:
    """8x8 element stiffness (unit thickness).

    ``quadrature="gauss2"`` is the exact 2x2 Gauss rule for the bilinear
    element. ``"centroid"`` is the one-point area-times-centroid form, kept
    for comparison only; it carries spurious zero-energy modes.
    """
    return _element_stiffness(material, float(grid.element_size), quadrature)


def element_dofs(mask: GeometryMask) -> tuple[np.ndarray, np.ndarray]:
    """Solid cell coordinates (n, 2) and their global DOF numbers (n, 8)."""
    h, _ = mask.shape
    cells = np.argwhere(mask.cells == 1)
    r, c = cells[:, 0], cells[:, 1]
    # bottom-left, bottom-right, top-right, top-left in image node coordinates
    nodes = np.stack(
        [
            node_index(r + 1, c, h),
            node_index(r + 1, c + 1, h),
            node_index(r, c + 1, h),
            node_index(r, c, h),
        ],
        axis=1,
    )
    dofs = np.empty((len(cells), 8), dtype=np.int64)
    dofs[:, 0::2] = 2 * nodes
    dofs[:, 1::2] = 2 * nodes + 1
    return cells, dofs


def wall_dofs(mask: GeometryMask) -> np.ndarray:
    """DOFs of wall nodes belonging to solid cells of column 0 (both directions)."""
    h, _ = mask.shape
    rows = np.flatnonzero(mask.cells[:, 0])
    nodes = np.unique(np.concatenate([rows, rows + 1]))
    nodes = node_index(nodes, 0, h)
    return np.sort(np.concatenate([2 * nodes, 2 * nodes + 1]))


def assemble_full(mask: GeometryMask, material: Material, grid: GridSpec = GridSpec(), quadrature: str = "gauss2"):
    """Global stiffness over all ``2 * n_nodes`` DOFs (unused nodes give empty rows)."""
    Ke = element_stiffness(material, grid, quadrature)
    _, dofs = element_dofs(mask)
    n = 2 * grid.n_nodes
    rows = np.repeat(dofs, 8, axis=1).ravel()
    cols = np.tile(dofs, (1, 8)).ravel()
    vals = np.tile(Ke.ravel(), len(dofs))
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


@dataclass
class GlobalSystem:
    """Reduced system over free DOFs.

    ``free`` lists the global DOF number of each reduced unknown in increasing
    order; ``dof_map[g]`` is the reduced index of global DOF ``g`` or -1 when
    the DOF is fixed or belongs to no solid element.
    """

    K: sp.csr_matrix
    F: np.ndarray
    free: np.ndarray
    dof_map: np.ndarray
    n_total: int

    @property
    def size(self) -> int:
        return len(self.free)


def _reduce(K_full: sp.csr_matrix, F_full: np.ndarray, fixed: np.ndarray, active: np.ndarray) -> GlobalSystem:
    n = K_full.shape[0]
    is_free = np.zeros(n, dtype=bool)
    is_free[active] = True
    is_free[fixed] = False
    free = np.flatnonzero(is_free)
    dof_map = np.full(n, -1, dtype=np.int64)
    dof_map[free] = np.arange(len(free))
    K = K_full[free][:, free].tocsr()
    return GlobalSystem(K=K, F=F_full[free].copy(), free=free, dof_map=dof_map, n_total=n)


def assemble(p: ProblemSpec, quadrature: str = "gauss2") -> GlobalSystem:
    """Assemble ``K u = F`` with the wall DOFs eliminated."""
    K_full = assemble_full(p.mask, p.material, p.grid, quadrature)
    F_full = np.zeros(K_full.shape[0])
    for node, fx, fy in distribute_load(p.mask, p.load):
        F_full[2 * node] += fx
        F_full[2 * node + 1] += fy
    _, dofs = element_dofs(p.mask)
    return _reduce(K_full, F_full, wall_dofs(p.mask), np.unique(dofs))


def _banded_upper(K: sp.csr_matrix) -> np.ndarray:
    """Upper banded storage ``ab[u + i - j, j] = K[i, j]`` as used by LAPACK ``pbtrf``."""
    U = sp.triu(K).tocoo()
    u = int((U.col - U.row).max()) if U.nnz else 0
    ab = np.zeros((u + 1, K.shape[0]))
    ab[u + U.row - U.col, U.col] = U.data
    return ab


def solve_reduced(K: sp.csr_matrix, F: np.ndarray) -> np.ndarray:
    """Direct solve of an SPD system by banded Cholesky factorization."""
    if K.shape[0] == 0:
        return np.zeros(0)
    if not np.any(F):
        return np.zeros_like(F)
    try:
        cb = scipy.linalg.cholesky_banded(_banded_upper(K), lower=False, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"stiffness matrix is not positive definite: {exc}") from exc
    return scipy.linalg.cho_solve_banded((cb, False), F, check_finite=False)


def solve_displacements(sys: GlobalSystem) -> np.ndarray:
    """Full nodal displacement vector (zeros at fixed and unused DOFs)."""
    u_free = solve_reduced(sys.K, sys.F)
    if not np.all(np.isfinite(u_free)):
        raise SingularSystem("non-finite displacements")
    resid = np.linalg.norm(sys.K @ u_free - sys.F)
    if resid > 1e-8 * max(1.0, np.linalg.norm(sys.F)):
        raise SingularSystem(f"residual {resid:.3e} too large; system is near singular")
    u = np.zeros(sys.n_total)
    u[sys.free] = u_free
    return u


def solve_with_prescribed(
    mask: GeometryMask,
    material: Material,
    prescribed: dict[int, float],
    grid: GridSpec = GridSpec(),
    forces: np.ndarray | None = None,
) -> np.ndarray:
    """Solve with arbitrary prescribed DOF values (used for patch tests)."""
    K_full = assemble_full(mask, material, grid)
    n = K_full.shape[0]
    F_full = np.zeros(n) if forces is None else np.asarray(forces, dtype=float).copy()
    fixed = np.array(sorted(prescribed), dtype=np.int64)
    u = np.zeros(n)
    u[fixed] = [prescribed[d] for d in fixed]
    _, dofs = element_dofs(mask)
    sys = _reduce(K_full, F_full - K_full @ u, fixed, np.unique(dofs))
    u[sys.free] = solve_reduced(sys.K, sys.F)
    return u


@dataclass
class ElementStresses:
    """Centroid stresses of the solid cells: ``cells`` (n, 2) rows/cols, ``sigma`` (n, 3) as sx, sy, txy."""

    cells: np.ndarray
    sigma: np.ndarray

    @property
    def sigma_x(self):
        return self.sigma[:, 0]

    @property
    def sigma_y(self):
        return self.sigma[:, 1]

    @property
    def tau_xy(self):
        return self.sigma[:, 2]


def recover_stresses(p: ProblemSpec, u: np.ndarray) -> ElementStresses:
    cells, dofs = element_dofs(p.mask)
    B0 = strain_displacement(0.0, 0.0, p.grid.element_size)
    CB = elasticity_matrix(p.material) @ B0
    sigma = u[dofs] @ CB.T
    return ElementStresses(cells, sigma)


def von_mises(sigma_x, sigma_y, tau_xy):
    """2-D von Mises equivalent stress (elementwise)."""
    sx, sy, t = np.asarray(sigma_x), np.asarray(sigma_y), np.asarray(tau_xy)
    return np.sqrt(np.maximum(sx * sx + sy * sy - sx * sy + 3.0 * t * t, 0.0))


def stress_field(p: ProblemSpec, stresses: ElementStresses) -> np.ndarray:
    field = np.zeros(p.grid.shape)
    r, c = stresses.cells[:, 0], stresses.cells[:, 1]
    field[r, c] = von_mises(stresses.sigma_x, stresses.sigma_y, stresses.tau_xy)
    return field


def solve_problem(p: ProblemSpec) -> np.ndarray:
    """Von Mises stress per cell (MPa, float64), zero on void cells."""
    u = solve_displacements(assemble(p))
    return stress_field(p, recover_stresses(p, u))
