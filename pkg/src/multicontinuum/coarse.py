"""Coupled multicontinuum coarse system on the Q1 coarse grid.

Per coarse cell K the bilinear form uses constant densities coef/|K|:

    a(U, V) = sum_ij  alpha[i,m,j,n] d_m U_i d_n V_j + beta_m[i,m,j] d_m U_i V_j
                    + beta_m[j,n,i] U_i d_n V_j   + beta[i,j] U_i V_j

and the load is the per-corner source weight int_K f phi_s N_a.  Unknowns are ordered
continuum-major: dof = i * n_nodes + node.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fem import FemSpace, reference_matrices
from .grid import CoarseGrid
from .sparsela import DEFAULT_TOL, SolverError, solve_spd


class CoarseAssemblyError(ValueError):
    pass


@dataclass
class CoarseSystem:
    K: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray
    N: int
    M: int
    cross_terms: bool


@dataclass
class CoarseSolution:
    U: np.ndarray          # (N, M+1, M+1), indexed [i, y, x]
    cross_terms: bool
    residual: float

    @property
    def N(self):
        return self.U.shape[0]

    def cell_means(self):
        """(N, M, M) cell averages (mean of the four corners, exact for Q1)."""
        U = self.U
        return 0.25 * (U[:, :-1, :-1] + U[:, :-1, 1:] + U[:, 1:, :-1] + U[:, 1:, 1:])


def _element_blocks(alpha, beta, beta_m, area, H, cross_terms):
    """(N, 4, N, 4) element matrix indexed [j, b, i, a] (test, trial)."""
    G, Mref, D = reference_matrices()
    Mh = Mref * H ** 2
    Dh = D * H
    a = alpha / area
    E = np.einsum("imjn,mnab->jbia", a, G)
    E += np.einsum("ij,ab->jbia", beta / area, Mh)
    if cross_terms:
        bm = beta_m / area
        # beta_m[i,m,j] d_m N_a N_b  and  beta_m[j,n,i] N_a d_n N_b
        E += np.einsum("imj,mab->jbia", bm, Dh)
        E += np.einsum("jni,nba->jbia", bm, Dh)
    return E


def assemble_coarse(coarse: CoarseGrid, eff, cross_terms: bool = True) -> CoarseSystem:
    """Assemble the coupled system and load with homogeneous Dirichlet data."""
    M, N = coarse.M, eff.N
    if eff.alpha.shape[0] != M * M:
        raise CoarseAssemblyError(
            f"coefficients given for {eff.alpha.shape[0]} cells, coarse grid has {M * M}")
    if eff.f_corner is None:
        raise CoarseAssemblyError("effective source weights are missing")
    space = FemSpace(M, M, coarse.H)
    nn = space.n_nodes
    conn = space.connectivity()
    rows, cols, vals = [], [], []
    rhs = np.zeros(N * nn)
    ii = np.arange(N)[:, None] * nn
    for w in range(M * M):
        E = _element_blocks(eff.alpha[w], eff.beta[w], eff.beta_m[w],
                            eff.rve_area[w], coarse.H, cross_terms)
        dofs = (ii + conn[w][None, :]).ravel()        # [j, b] flattened
        rows.append(np.repeat(dofs, len(dofs)))
        cols.append(np.tile(dofs, len(dofs)))
        vals.append(E.reshape(len(dofs), len(dofs)).ravel())
        scale = eff.omega_area[w] / eff.rve_area[w]
        for s in range(N):
            rhs[s * nn + conn[w]] += scale * eff.f_corner[w, s]
    K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N * nn, N * nn))
    bnd = space.boundary_nodes()
    fixed = (ii + bnd[None, :]).ravel()
    free = np.setdiff1d(np.arange(N * nn), fixed)
    return CoarseSystem(K, rhs, free, N, M, cross_terms)


def asymmetry(system: CoarseSystem) -> float:
    K = system.K
    d = abs(K - K.T).max()
    return float(d / max(abs(K).max(), 1e-300))


def solve_coarse(system: CoarseSystem, tol=DEFAULT_TOL) -> CoarseSolution:
    K, b, free = system.K, system.rhs, system.free
    Kf = K[free][:, free]
    diag = Kf.diagonal()
    if np.any(diag <= 0):
        bad = int(np.flatnonzero(diag <= 0)[0])
        raise SolverError(
            f"coarse matrix has nonpositive diagonal entry {diag[bad]:.3e} at free dof {bad}; "
            "the system is singular or indefinite")
    x = np.zeros(K.shape[0])
    if np.any(b[free]):
        try:
            x[free] = solve_spd(Kf, b[free], tol=tol)
        except (SolverError, RuntimeError) as exc:
            raise SolverError(f"coarse solve failed: {exc}") from exc
        if not np.all(np.isfinite(x)):
            raise SolverError("coarse solve produced non-finite values (singular system)")
    nb = np.linalg.norm(b[free])
    res = float(np.linalg.norm(Kf @ x[free] - b[free]) / nb) if nb > 0 else 0.0
    U = x.reshape(system.N, system.M + 1, system.M + 1)
    return CoarseSolution(U, system.cross_terms, res)


def coarse_solve(coarse: CoarseGrid, eff, cross_terms=True, tol=DEFAULT_TOL) -> CoarseSolution:
    return solve_coarse(assemble_coarse(coarse, eff, cross_terms), tol)
