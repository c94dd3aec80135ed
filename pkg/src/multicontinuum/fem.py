"""Bilinear (Q1) finite elements on structured square-cell grids.

Cell data (conductivity, indicators, sources) are constant per cell and
stored as ``(ny, nx)`` arrays; nodal vectors use the row-major node order of
:mod:`multicontinuum.grid`.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .grid import FineGrid, OversampleRegion
from .sparsela import solve_spd

_G = (1.0 - 1.0 / np.sqrt(3.0)) / 2.0
GAUSS_2X2 = np.array([[_G, _G], [1 - _G, _G], [1 - _G, 1 - _G], [_G, 1 - _G]])
GAUSS_W = np.full(4, 0.25)


def _shape(xi, eta):
    return np.array([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta])


def _dshape(xi, eta):
    """Reference gradients, shape (2, 4)."""
    return np.array([[-(1 - eta), 1 - eta, eta, -eta],
                     [-(1 - xi), -xi, xi, 1 - xi]])


@lru_cache(maxsize=None)
def reference_matrices():
    """Unit-square Q1 integrals, node order (0,0), (1,0), (1,1), (0,1).

    Returns ``(G, M, D)`` with ``G[m, n][a, b] = int d_m N_a d_n N_b``,
    ``M[a, b] = int N_a N_b`` and ``D[m][a, b] = int d_m N_a N_b``.
    Scaling to a cell of side h: G unchanged, M * h**2, D * h.
    """
    G = np.zeros((2, 2, 4, 4))
    M = np.zeros((4, 4))
    D = np.zeros((2, 4, 4))
    for (xi, eta), w in zip(GAUSS_2X2, GAUSS_W):
        N = _shape(xi, eta)
        dN = _dshape(xi, eta)
        G += w * np.einsum("ma,nb->mnab", dN, dN)
        M += w * np.outer(N, N)
        D += w * np.einsum("ma,b->mab", dN, N)
    for a in (G, M, D):
        a.setflags(write=False)
    return G, M, D


def element_stiffness():
    G, _, _ = reference_matrices()
    return G[0, 0] + G[1, 1]


@dataclass(frozen=True)
class FemSpace:
    """Q1 space on an ``nx`` by ``ny`` block of square cells of side ``h``."""
    nx: int
    ny: int
    h: float
    origin: tuple = (0.0, 0.0)

    @classmethod
    def from_grid(cls, fine: FineGrid):
        return cls(fine.nx, fine.nx, fine.h)

    @classmethod
    def from_region(cls, region: OversampleRegion):
        return cls(region.nx, region.ny, region.coarse.fine.h, region.origin)

    @property
    def n_nodes(self):
        return (self.nx + 1) * (self.ny + 1)

    @property
    def shape_nodes(self):
        return self.ny + 1, self.nx + 1

    def connectivity(self):
        return _connectivity(self.nx, self.ny)

    def cell_centers(self):
        xc = self.origin[0] + (np.arange(self.nx) + 0.5) * self.h
        yc = self.origin[1] + (np.arange(self.ny) + 0.5) * self.h
        return np.meshgrid(xc, yc)

    def node_coords(self):
        xn = self.origin[0] + np.arange(self.nx + 1) * self.h
        yn = self.origin[1] + np.arange(self.ny + 1) * self.h
        return np.meshgrid(xn, yn)

    def boundary_nodes(self):
        mask = np.zeros(self.shape_nodes, dtype=bool)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        return np.flatnonzero(mask.ravel())

    def _check_cells(self, a, name):
        a = np.asarray(a, dtype=float)
        if a.shape != (self.ny, self.nx):
            raise ValueError(f"{name} has shape {a.shape}, expected {(self.ny, self.nx)}")
        return a


@lru_cache(maxsize=64)
def _connectivity(nx, ny):
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n00 = (j * (nx + 1) + i).ravel()
    conn = np.stack([n00, n00 + 1, n00 + nx + 2, n00 + nx + 1], axis=1)
    conn.setflags(write=False)
    return conn


def node_cell_incidence(space: FemSpace):
    """Sparse (n_nodes, n_cells) matrix with h^2/4 at each cell corner, so
    ``B @ w`` is the vector of v -> int w v for cell-wise constant w."""
    conn = space.connectivity()
    nc = conn.shape[0]
    data = np.full(conn.size, space.h ** 2 / 4.0)
    cols = np.repeat(np.arange(nc), 4)
    return sp.csr_matrix((data, (conn.ravel(), cols)), shape=(space.n_nodes, nc))


def _assemble(space: FemSpace, weights, Ke):
    conn = space.connectivity()
    w = weights.ravel()
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    data = (w[:, None, None] * Ke[None]).ravel()
    n = space.n_nodes
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def assemble_stiffness(space: FemSpace, kappa, cell_mask=None):
    """Matrix of (u, v) -> int kappa grad u . grad v, optionally restricted to
    the cells selected by ``cell_mask``."""
    kappa = space._check_cells(kappa, "conductivity")
    if np.any(kappa <= 0):
        raise ValueError("conductivity must be positive for stiffness assembly")
    if cell_mask is not None:
        kappa = np.where(cell_mask, kappa, 0.0)
    return _assemble(space, kappa, element_stiffness())


def assemble_mass(space: FemSpace, weight=None):
    """Weighted mass matrix (u, v) -> int w u v."""
    w = np.ones((space.ny, space.nx)) if weight is None else space._check_cells(weight, "weight")
    _, M, _ = reference_matrices()
    return _assemble(space, w * space.h ** 2, M)


def cell_functional(space: FemSpace, weight):
    """Vector of v -> int w v for cell-wise constant w (exact for Q1)."""
    w = space._check_cells(weight, "weight").ravel() * (space.h ** 2 / 4.0)
    out = np.zeros(space.n_nodes)
    conn = space.connectivity()
    for a in range(4):
        out += np.bincount(conn[:, a], weights=w, minlength=space.n_nodes)
    return out


def _patch_weight(space, psi, patch):
    psi = space._check_cells(psi, "indicator")
    if patch is not None:
        psi = np.where(patch, psi, 0.0)
    return psi


def indicator_functional(space: FemSpace, psi, patch=None):
    """``(vector, mass)`` for v -> int_patch psi v and int_patch psi."""
    w = _patch_weight(space, psi, patch)
    return cell_functional(space, w), float(w.sum() * space.h ** 2)


def moment_functional(space: FemSpace, psi, patch, axis: int, c: float):
    """``(vector, value)`` for v -> int_patch (x_m - c) psi v, with x_m taken at
    cell centers, and its value int_patch (x_m - c) psi."""
    w = _patch_weight(space, psi, patch)
    xm = space.cell_centers()[axis] - c
    return cell_functional(space, w * xm), float((w * xm).sum() * space.h ** 2)


def gradient_functional(space: FemSpace, psi, patch, axis: int):
    """Vector of v -> int_patch psi d_m v (exact for Q1)."""
    w = _patch_weight(space, psi, patch).ravel() * space.h
    # int over a cell of d_x v = h/2 (v10 + v11 - v00 - v01), likewise for y
    signs = np.array([[-0.5, 0.5, 0.5, -0.5], [-0.5, -0.5, 0.5, 0.5]])[axis]
    out = np.zeros(space.n_nodes)
    conn = space.connectivity()
    for a in range(4):
        out += np.bincount(conn[:, a], weights=w * signs[a], minlength=space.n_nodes)
    return out


def assemble_load(space: FemSpace, f):
    return cell_functional(space, f)


def cell_means(space: FemSpace, u):
    """Mean of a nodal Q1 field over each cell (average of its four nodes)."""
    u = np.asarray(u).reshape(space.shape_nodes)
    return 0.25 * (u[:-1, :-1] + u[:-1, 1:] + u[1:, :-1] + u[1:, 1:])


def solve_dirichlet(space: FemSpace, kappa, f, tol=1e-10):
    """Homogeneous Dirichlet solve of -div(kappa grad u) = f on the space."""
    A = assemble_stiffness(space, kappa)
    b = assemble_load(space, f)
    bnd = space.boundary_nodes()
    free = np.setdiff1d(np.arange(space.n_nodes), bnd)
    u = np.zeros(space.n_nodes)
    if np.any(b[free]):
        u[free] = solve_spd(A[free][:, free], b[free], tol=tol)
    return u


def solve_fine_reference(fine: FineGrid, kappa, f, tol=1e-10):
    """Fine-scale reference solution on the unit square (nodal vector)."""
    kappa = getattr(kappa, "values", kappa)
    f = getattr(f, "values", f)
    return solve_dirichlet(FemSpace.from_grid(fine), kappa, f, tol)
