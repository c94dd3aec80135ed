"""Constrained cell problems on oversampled regions.

Two families are solved in ``R+`` (the target coarse cell plus ``l`` layers):

* average fields ``phi_i`` with ``int_{R^p} phi_i psi_j = delta_ij int_{R^p} psi_j``
  on every patch ``p``;
* moment fields ``phi_i^m`` with
  ``int_{R^p} phi_i^m psi_j = delta_ij int_{R^p} (x_m - c_mj) psi_j``, where
  ``c_mj`` is the psi_j-weighted centroid of the target patch.

Both minimize the energy ``int kappa |grad phi|^2`` under natural boundary
conditions; the Lagrange multipliers are the exchange coefficients.  Internally
the saddle system is written ``A x + C^T lam = 0`` with constraint rows
``v -> int_{R^p} psi_j v``, so the multiplier attached to row ``(p, j)`` is
``beta_ij^p = -lam * int_{R^p} psi_j``.

The gradient-constraint variant (average and mean-gradient constraints in a
single RVE) lives in :func:`solve_gradconstraint_cells`.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fem import (FemSpace, assemble_stiffness, cell_functional,
                  gradient_functional, node_cell_incidence)
from .grid import CoarseGrid, OversampleRegion, oversample
from .sparsela import DEFAULT_TOL, SaddleFactor

DEGENERATE_MASS = 1e-12


class CellProblemError(ValueError):
    pass


def _as_array(obj):
    return getattr(obj, "values", getattr(obj, "labels", obj))


def region_content_key(region: OversampleRegion, kappa, labels) -> str:
    """Hash of everything a region's factorization depends on (not its position)."""
    k = np.ascontiguousarray(region.extract(kappa))
    lab = np.ascontiguousarray(region.extract(labels))
    hsh = hashlib.sha1()
    hsh.update(np.array([region.px, region.py, region.coarse.block], dtype=np.int64).tobytes())
    hsh.update(k.tobytes())
    hsh.update(lab.tobytes())
    return hsh.hexdigest()


class CellProblem:
    """Factorized average/moment-constrained problem on one oversampled region.

    Coordinates are region-local (origin at the region's lower-left corner);
    only differences ``x_m - c`` enter, so results do not depend on the frame.
    """

    def __init__(self, region: OversampleRegion, kappa, cmap, N=None):
        kappa = _as_array(kappa)
        labels = _as_array(cmap)
        self.N = int(N if N is not None else getattr(cmap, "N", labels.max()))
        self.region = region
        self.kappa = np.ascontiguousarray(region.extract(kappa))
        self.labels = np.ascontiguousarray(region.extract(labels))
        self.space = FemSpace(region.nx, region.ny, region.coarse.fine.h)
        self.A = assemble_stiffness(self.space, self.kappa)
        self.patch = region.patch_of_cells()
        P, N = region.n_patches, self.N
        h2 = self.space.h ** 2
        xc, yc = self.space.cell_centers()
        # cell weights of every (patch, continuum) pair, column r = p * N + j
        which = (self.patch * N + (self.labels - 1)).ravel()
        W = sp.csr_matrix((np.ones(which.size), (np.arange(which.size), which)),
                          shape=(which.size, P * N))
        self.mass = (np.asarray(W.sum(axis=0)).ravel() * h2).reshape(P, N).T
        self.first = np.stack([(W.T @ xc.ravel()) * h2, (W.T @ yc.ravel()) * h2])
        self.first = self.first.reshape(2, P, N).transpose(2, 0, 1)
        small = self.mass <= DEGENERATE_MASS * region.coarse.H ** 2
        if small.any():
            j, p = map(int, np.argwhere(small)[0])
            raise CellProblemError(
                f"continuum {j + 1} is empty on patch {region.patches[p]} "
                f"of the region around coarse cell {region.target}")
        # row r = p * N + j
        self.C = sp.csr_matrix((node_cell_incidence(self.space) @ W).T)
        self.factor = SaddleFactor(self.A, self.C)

    @property
    def n_patches(self):
        return self.region.n_patches

    def apply_A(self, fields):
        """A @ fields.T, cached per field array (fields are shared by all
        targets of one factorization)."""
        cache = self.__dict__.setdefault("_apply_cache", {})
        key = (id(fields), fields.shape)
        hit = cache.get(key)
        if hit is None or hit[0] is not fields:
            hit = (fields, self.A @ fields.reshape(-1, fields.shape[-1]).T)
            cache[key] = hit
        return hit[1]

    def centers(self, p0=None):
        """c_mj: psi_j-weighted centroid of patch ``p0`` (default: target), shape (2, N)."""
        p0 = self.region.p0 if p0 is None else p0
        return (self.first[:, :, p0] / self.mass[:, p0][:, None]).T

    def _solve(self, g, tol):
        k = self.C.shape[0]
        x, lam = self.factor.solve(np.zeros((self.space.n_nodes, g.shape[1])), g, tol)
        beta = -lam.reshape(self.n_patches, self.N, -1) * self.mass.T[:, :, None]
        return x.T, np.moveaxis(beta, 2, 0)  # (cols, n), (cols, P, N)

    def solve_avg(self, tol=DEFAULT_TOL):
        """Average fields phi (N, n) and multipliers beta[i, j, p]."""
        N, P = self.N, self.n_patches
        g = np.zeros((P * N, N))
        for i in range(N):
            g[np.arange(P) * N + i, i] = self.mass[i]
        phi, beta = self._solve(g, tol)
        return phi, np.transpose(beta, (0, 2, 1))

    def solve_moment(self, c=None, tol=DEFAULT_TOL):
        """Moment fields phi^m (N, 2, n) and multipliers beta[i, m, j, p] for centers c (2, N)."""
        N, P = self.N, self.n_patches
        c = np.zeros((2, N)) if c is None else np.asarray(c)
        g = np.zeros((P * N, 2 * N))
        for i in range(N):
            for m in range(2):
                g[np.arange(P) * N + i, 2 * i + m] = self.first[i, m] - c[m, i] * self.mass[i]
        phi, beta = self._solve(g, tol)
        n = phi.shape[1]
        return phi.reshape(N, 2, n), np.transpose(beta, (0, 2, 1)).reshape(N, 2, N, P)

    def cell_set(self, phi, beta, phi_m0, beta_m0, p0=None):
        """Assemble a :class:`CellSolutionSet` for target patch ``p0``.

        ``phi_m0``/``beta_m0`` are the moment solutions for c = 0; the centered
        ones follow by linearity: phi_i^m(c) = phi_i^m(0) - c_mi phi_i.
        """
        p0 = self.region.p0 if p0 is None else p0
        c = self.centers(p0)
        phi_m = phi_m0 - c.T[:, :, None] * phi[:, None, :]
        beta_m = beta_m0 - c.T[:, :, None, None] * beta[:, None, :, :]
        cs = CellSolutionSet(self, phi, phi_m, beta, beta_m, c, p0)
        # A phi^m by the same linear shift, reusing the products of the c = 0 fields
        N = self.N
        APm = self.apply_A(phi_m0).reshape(-1, N, 2) - self.apply_A(phi)[:, :, None] * c.T[None]
        cs.A_phi_grad = APm.reshape(-1, 2 * N)
        return cs


@dataclass
class CellSolutionSet:
    problem: CellProblem
    phi: np.ndarray        # (N, n)
    phi_grad: np.ndarray   # (N, 2, n)
    beta: np.ndarray       # (N, N, P)   beta_ij^p = -lambda * mass
    beta_grad: np.ndarray  # (N, 2, N, P) beta_ij^{mp}
    centers: np.ndarray    # (2, N) c_mj
    p0: int
    A_phi_grad: np.ndarray | None = None   # (n, 2N) optional cached A phi^m

    @property
    def region(self):
        return self.problem.region

    @property
    def space(self):
        return self.problem.space

    @property
    def N(self):
        return self.problem.N

    def constraint_residuals(self):
        """Max relative violation of the average and moment constraints."""
        pb = self.problem
        N, P = self.N, pb.n_patches
        Cphi = (pb.C @ self.phi.T).reshape(P, N, N)           # [p, j, i]
        want = np.einsum("ij,jp->pji", np.eye(N), pb.mass)
        r_avg = np.abs(Cphi - want).max() / pb.mass.max()
        Cm = (pb.C @ self.phi_grad.reshape(N * 2, -1).T).reshape(P, N, N, 2)  # [p, j, i, m]
        mom = pb.first - self.centers.T[:, :, None] * pb.mass[:, None, :]     # [j, m, p]
        want_m = np.einsum("ij,jmp->pjim", np.eye(N), mom)
        scale = max(np.abs(pb.first).max(), 1e-300)
        r_mom = np.abs(Cm - want_m).max() / scale
        target_moment = np.abs(mom[:, :, self.p0]).max() / scale
        return dict(average=float(r_avg), moment=float(r_mom), target_moment=float(target_moment))

    def energy(self, u, v, cells=None):
        A = self.problem.A if cells is None else assemble_stiffness(
            self.space, self.problem.kappa, cell_mask=cells)
        return u @ (A @ v)

    def identities(self):
        """Relative defects of the multiplier identities.

        ``rowsum``: sum_{j,p} beta_ij^p = 0; ``avg_energy``:
        sum_p beta_is^p = int_{R+} kappa grad phi_i . grad phi_s;
        ``grad_energy``: sum_p beta_ik^{mp} = int_{R+} kappa grad phi_i^m . grad phi_k.
        """
        N = self.N
        AP = self.problem.apply_A(self.phi)                    # (n, N)
        E = self.phi @ AP
        Em = np.einsum("imn,nk->imk", self.phi_grad, AP)
        sb = self.beta.sum(axis=2)
        sbm = self.beta_grad.sum(axis=3)
        scale = max(np.abs(E).max(), 1e-300)
        # Cauchy-Schwarz bound on |Em|; Em itself may vanish by symmetry
        Pm = self.phi_grad.reshape(2 * N, -1)
        APm = self.A_phi_grad if self.A_phi_grad is not None else self.problem.A @ Pm.T
        Emm = np.einsum("an,na->a", Pm, APm)
        # floor: |E| times the target size, the magnitude of Em when phi^m ~ x - c
        scale_m = max(np.sqrt(np.abs(E).max() * np.abs(Emm).max()),
                      np.abs(E).max() * self.region.coarse.H, 1e-300)
        # a vanishing sum is measured against the sum of magnitudes of its terms
        rs = np.abs(self.beta.sum(axis=(1, 2))) / np.maximum(np.abs(self.beta).sum(axis=(1, 2)), 1e-300)
        return dict(
            rowsum=float(rs.max()),
            avg_energy=float(np.abs(sb - E).max() / scale),
            grad_energy=float(np.abs(sbm - Em).max() / scale_m),
            N=N,
        )

    def target_nodes(self):
        """Region-local node indices of the target patch (row-major)."""
        r = self.region
        b = r.coarse.block
        pi, pj = self.p0 % r.px, self.p0 // r.px
        jj, ii = np.meshgrid(np.arange(pj * b, (pj + 1) * b + 1),
                             np.arange(pi * b, (pi + 1) * b + 1), indexing="ij")
        return (jj * (r.nx + 1) + ii).ravel()

    def target_cells(self):
        r = self.region
        b = r.coarse.block
        pi, pj = self.p0 % r.px, self.p0 // r.px
        return (slice(pj * b, (pj + 1) * b), slice(pi * b, (pi + 1) * b))

    def target_stiffness(self):
        b = self.region.coarse.block
        sl = self.target_cells()
        space = FemSpace(b, b, self.space.h)
        return assemble_stiffness(space, self.problem.kappa[sl])

    def field_norms(self):
        """Region-averaged L2-type norms (root mean square of nodal values)."""
        return (np.sqrt(np.mean(self.phi ** 2, axis=1)),
                np.sqrt(np.mean(self.phi_grad ** 2, axis=2)))


def solve_region(region: OversampleRegion, kappa, cmap, tol=DEFAULT_TOL) -> CellSolutionSet:
    """Average and moment cell problems for one region."""
    pb = CellProblem(region, kappa, cmap)
    phi, beta = pb.solve_avg(tol)
    phi_m0, beta_m0 = pb.solve_moment(None, tol)
    return pb.cell_set(phi, beta, phi_m0, beta_m0)


def solve_avg_cells(region, kappa, cmap, tol=DEFAULT_TOL):
    """phi_i fields (N, n) and multipliers beta_ij^p (N, N, P)."""
    return CellProblem(region, kappa, cmap).solve_avg(tol)


def solve_grad_cells(region, kappa, cmap, tol=DEFAULT_TOL):
    """Centered moment fields phi_i^m (N, 2, n), multipliers beta_ij^{mp} and c_mj."""
    pb = CellProblem(region, kappa, cmap)
    c = pb.centers()
    phi_m, beta_m = pb.solve_moment(c, tol)
    return phi_m, beta_m, c


def interface_nodes(space: FemSpace, labels, cells=None):
    """Nodes touching cells of more than one continuum (optionally only within ``cells``)."""
    lab = np.asarray(labels)
    if cells is not None:
        keep = np.zeros(lab.shape, dtype=bool)
        keep[cells] = True
    else:
        keep = np.ones(lab.shape, dtype=bool)
    big = np.iinfo(np.int64).max
    lo = np.full(space.shape_nodes, big)
    hi = np.full(space.shape_nodes, -1)
    for dj in (0, 1):
        for di in (0, 1):
            sl = (slice(dj, dj + lab.shape[0]), slice(di, di + lab.shape[1]))
            lo[sl] = np.where(keep, np.minimum(lo[sl], lab), lo[sl])
            hi[sl] = np.where(keep, np.maximum(hi[sl], lab), hi[sl])
    return np.flatnonzero(((hi >= 0) & (hi != lo)).ravel())


def interface_oscillation(phi, space, labels, cells=None):
    """Largest |phi_i| over nodes on continuum interfaces."""
    nodes = interface_nodes(space, labels, cells)
    if nodes.size == 0:
        return 0.0
    return float(np.abs(np.asarray(phi)[:, nodes]).max())


def cell_gradients(u, space: FemSpace):
    """|grad u| at the cell centers of a nodal Q1 field, shape (ny, nx)."""
    u = np.asarray(u).reshape(space.shape_nodes)
    gx = 0.5 * (u[:-1, 1:] - u[:-1, :-1] + u[1:, 1:] - u[1:, :-1]) / space.h
    gy = 0.5 * (u[1:, :-1] - u[:-1, :-1] + u[1:, 1:] - u[:-1, 1:]) / space.h
    return np.hypot(gx, gy)


def interface_cells(labels):
    """Cells sharing an edge with a cell of another continuum."""
    lab = np.asarray(labels)
    m = np.zeros(lab.shape, dtype=bool)
    dx = lab[:, 1:] != lab[:, :-1]
    dy = lab[1:, :] != lab[:-1, :]
    m[:, 1:] |= dx
    m[:, :-1] |= dx
    m[1:, :] |= dy
    m[:-1, :] |= dy
    return m


def interface_gradient(fields, space: FemSpace, labels, cells=None):
    """Largest |grad u| over interface cells for a stack of nodal fields,
    optionally restricted to the cell window ``cells`` (a pair of slices)."""
    fields = np.asarray(fields)
    fields = fields.reshape(-1, fields.shape[-1])
    lab = np.asarray(labels)
    mask = interface_cells(lab)
    if cells is not None:
        keep = np.zeros(lab.shape, dtype=bool)
        keep[cells] = True
        mask &= keep
    if not mask.any():
        return 0.0
    return float(max(cell_gradients(u, space)[mask].max() for u in fields))


# ---------------------------------------------------------------------------
# average + gradient constraints in a single RVE


@dataclass
class GradConstrainedSet:
    region: OversampleRegion
    space: FemSpace
    kappa: np.ndarray
    labels: np.ndarray
    phi: np.ndarray          # (N, n)
    phi_grad: np.ndarray     # (N, 2, n)
    beta: np.ndarray         # (N, N)        average multipliers of phi_i
    alpha_n: np.ndarray      # (N, N, 2)     gradient multipliers of phi_i
    beta_m: np.ndarray       # (N, 2, N)     average multipliers of phi_i^m
    alpha_mn: np.ndarray     # (N, 2, N, 2)  gradient multipliers of phi_i^m
    mass: np.ndarray         # (N,)
    C: sp.csr_matrix
    A: sp.csr_matrix

    @property
    def N(self):
        return len(self.mass)

    def constraint_residuals(self):
        N = self.N
        r_avg = self.C[:N] @ self.phi.T                        # [j, i]
        g_avg = self.C[N:] @ self.phi.T                        # [(j, n), i]
        want = np.diag(self.mass)
        ra = np.abs(r_avg - want).max() / self.mass.max()
        rg = np.abs(g_avg).max() / self.mass.max()
        Pm = self.phi_grad.reshape(2 * N, -1).T
        ma = np.abs(self.C[:N] @ Pm).max() / self.mass.max()
        G = (self.C[N:] @ Pm).reshape(N, 2, N, 2)              # [j, n, i, m]
        wantg = np.einsum("ij,mn,j->jnim", np.eye(N), np.eye(2), self.mass)
        mg = np.abs(G - wantg).max() / self.mass.max()
        return dict(average=float(max(ra, ma)), gradient=float(max(rg, mg)))


def solve_gradconstraint_cells(region: OversampleRegion, kappa, cmap, tol=DEFAULT_TOL):
    """Cell problems with simultaneous average and mean-gradient constraints.

    Solved in the region itself (normally ``l = 0``, the bare RVE) with
    natural boundary conditions.
    """
    kappa = _as_array(kappa)
    labels_all = _as_array(cmap)
    N = int(getattr(cmap, "N", labels_all.max()))
    kap = np.ascontiguousarray(region.extract(kappa))
    lab = np.ascontiguousarray(region.extract(labels_all))
    space = FemSpace(region.nx, region.ny, region.coarse.fine.h)
    A = assemble_stiffness(space, kap)
    mass = np.zeros(N)
    avg_rows, grad_rows = [], []
    area = region.nx * region.ny * space.h ** 2
    for j in range(N):
        w = (lab == j + 1).astype(float)
        mass[j] = w.sum() * space.h ** 2
        if mass[j] <= DEGENERATE_MASS * area:
            raise CellProblemError(f"continuum {j + 1} is empty in RVE {region.target}")
        avg_rows.append(cell_functional(space, w))
        for n in range(2):
            grad_rows.append(gradient_functional(space, w, None, n))
    # rows: N average rows, then (j, n) gradient rows
    C = sp.csr_matrix(np.vstack(avg_rows + grad_rows))
    factor = SaddleFactor(A, C)
    k = C.shape[0]
    g = np.zeros((k, 3 * N))
    for i in range(N):
        g[i, i] = mass[i]
        for m in range(2):
            g[N + 2 * i + m, N + 2 * i + m] = mass[i]
    x, lam = factor.solve(np.zeros((space.n_nodes, 3 * N)), g, tol)
    mult = -lam * np.concatenate([mass, np.repeat(mass, 2)])[:, None]  # [row, col]
    phi = x[:, :N].T
    phi_grad = x[:, N:].T.reshape(N, 2, -1)
    beta = mult[:N, :N].T                                    # [i, j]
    alpha_n = mult[N:, :N].T.reshape(N, N, 2)                # [i, j, n]
    beta_m = mult[:N, N:].T.reshape(N, 2, N)                 # [i, m, j]
    alpha_mn = mult[N:, N:].T.reshape(N, 2, N, 2)            # [i, m, j, n]
    return GradConstrainedSet(region, space, kap, lab, phi, phi_grad, beta, alpha_n,
                              beta_m, alpha_mn, mass, C, sp.csr_matrix(A))


def boundary_decay_study(coarse: CoarseGrid, kappa, cmap, w: int, l_list, tol=DEFAULT_TOL,
                         boundary="reflect"):
    """Effective coefficients at cell ``w`` for each oversampling depth.

    Returns rows ``(l, delta)`` where delta is the max-norm deviation of the
    |R|-normalized coefficients from the largest-l run, relative to that
    run's largest entry.
    """
    from .effective import extract

    l_list = list(l_list)
    if l_list != sorted(l_list):
        raise ValueError("l_list must be ascending")
    flat = []
    for l in l_list:
        cs = solve_region(oversample(coarse, w, l, boundary), kappa, cmap, tol)
        e = extract(cs)
        flat.append(np.concatenate([e.alpha.ravel(), e.beta.ravel(), e.beta_m.ravel()])
                    / e.rve_area)
    ref = flat[-1]
    scale = np.abs(ref).max()
    return [(l, float(np.abs(v - ref).max() / scale)) for l, v in zip(l_list, flat)]
